//! SMT-LIB2 encoding of the QMS threshold query and the binary search that
//! computes QMS with an external solver.
//!
//! The query for threshold `q` asserts that two valuations agreeing on the
//! public inputs, and an output value `c`, exist such that `c` is hit by more
//! than `Δ = ceil((1 - q)·2^m)` more random assignments under the first
//! valuation than under the second, where `m = n·|RVar(e)|`. It is
//! unsatisfiable iff `QMS ≥ q`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use wait_timeout::ChildExt;

use crate::counting::{Qms, Valuation, Witness};
use crate::domain::{DomainConfig, Op, Value};
use crate::expr::{Expr, ExprKind, Var, VarClass};

/// Largest `n·|RVar|` accepted by the encoder.
pub const MAX_COPY_BITS: u32 = 16;

/// Trees larger than this are emitted with `let` bindings per DAG node.
const TREE_LIMIT: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmtProfile {
    /// Pure bit-vectors; indicator sums use `m + 2` bit accumulators.
    #[default]
    Bv,
    /// Bit-vectors with integer indicators and sums.
    Int,
}

impl SmtProfile {
    pub fn parse(s: &str) -> Option<SmtProfile> {
        match s {
            "bv" => Some(SmtProfile::Bv),
            "int" => Some(SmtProfile::Int),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SmtError {
    #[error("n·|RVar| = {m} exceeds the encoder limit of {MAX_COPY_BITS}")]
    TooManyCopies { m: u32 },
    #[error("cannot run solver `{cmd}`: {reason}")]
    SolverSpawnFailure { cmd: String, reason: String },
    #[error("solver inconclusive: {0}")]
    InconclusiveSolver(String),
    #[error("cannot write SMT script: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmtQuery {
    pub text: String,
    pub q: Ratio<u64>,
    pub m: u32,
    pub delta: u64,
    publics: Vec<Var>,
    secrets: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat,
    Unsat,
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct SolverVerdict {
    pub result: SatResult,
    pub elapsed: Duration,
    /// Values from `get-value`, keyed by symbol without `|` quotes.
    pub model: HashMap<String, Value>,
}

fn quoted(name: &str) -> String {
    format!("|{name}|")
}

fn primed(name: &str) -> String {
    format!("|{name}'|")
}

fn bv_const(v: u64, width: u32) -> String {
    format!("(_ bv{v} {width})")
}

/// `ceil((1 - q)·2^m)`.
pub fn delta(q: Ratio<u64>, m: u32) -> u64 {
    let (num, den) = (u128::from(*q.numer()), u128::from(*q.denom()));
    let gap = (den - num.min(den)) << m;
    gap.div_ceil(den) as u64
}

struct Emitter<'a> {
    d: &'a DomainConfig,
    uses_gf: bool,
}

impl Emitter<'_> {
    /// Renders `e` with randoms fixed to `fixed` and secrets renamed by
    /// `secret_name`.
    fn term(&self, e: &Expr, fixed: &HashMap<&Var, Value>, secret_name: &dyn Fn(&str) -> String) -> String {
        let n = self.d.bits();
        let leaf = |e: &Expr| -> Option<String> {
            match e.kind() {
                ExprKind::Const(c) => Some(bv_const(u64::from(*c), n)),
                ExprKind::Var(v) => Some(match v.class() {
                    VarClass::Random => bv_const(u64::from(fixed[v]), n),
                    VarClass::Secret => secret_name(v.name()),
                    VarClass::Public => quoted(v.name()),
                }),
                _ => None,
            }
        };
        let node = |e: &Expr, sub: &dyn Fn(&Expr) -> String| -> String {
            match e.kind() {
                ExprKind::Not(a) => format!("(bvnot {})", sub(a)),
                ExprKind::Binary(op, a, b) => {
                    let f = match op {
                        Op::Xor => "bvxor",
                        Op::And => "bvand",
                        Op::Or => "bvor",
                        Op::Add => "bvadd",
                        Op::Sub => "bvsub",
                        Op::Mul => "bvmul",
                        Op::Shl => "bvshl",
                        Op::Shr => "bvlshr",
                        Op::GfMul => "gf_mul",
                    };
                    format!("({f} {} {})", sub(a), sub(b))
                }
                _ => leaf(e).expect("leaf"),
            }
        };
        if e.size() <= TREE_LIMIT {
            type Node<'a> = dyn Fn(&Expr, &dyn Fn(&Expr) -> String) -> String + 'a;
            fn tree(e: &Expr, node: &Node) -> String {
                node(e, &|c| tree(c, node))
            }
            return tree(e, &node);
        }
        let order = e.postorder();
        let mut names: HashMap<Expr, String> = HashMap::new();
        let mut out = String::new();
        let mut depth = 0;
        for x in &order {
            if names.contains_key(x) {
                continue;
            }
            if let Some(l) = leaf(x) {
                names.insert(x.clone(), l);
                continue;
            }
            let t = node(x, &|c| names[c].clone());
            let name = format!("$v{}", names.len());
            let _ = write!(out, "(let (({name} {t})) ");
            depth += 1;
            names.insert(x.clone(), name);
        }
        out.push_str(&names[e]);
        out.push_str(&")".repeat(depth));
        out
    }

    fn gf_mul_defs(&self) -> String {
        let n = self.d.bits();
        let low = u64::from(self.d.poly() & self.d.mask());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "(define-fun xtime ((a (_ BitVec {n}))) (_ BitVec {n}) (ite (= ((_ extract {t} {t}) a) #b1) (bvxor (bvshl a {one}) {low}) (bvshl a {one})))",
            t = n - 1,
            one = bv_const(1, n),
            low = bv_const(low, n),
        );
        let zero = bv_const(0, n);
        let mut body = String::new();
        for i in 0..n {
            let _ = write!(body, "(let ((a{} {})) ", i, if i == 0 { "a".to_string() } else { format!("(xtime a{})", i - 1) });
        }
        let terms: Vec<String> = (0..n)
            .map(|i| format!("(ite (= ((_ extract {i} {i}) b) #b1) a{i} {zero})"))
            .collect();
        body.push_str(&fold("bvxor", &terms));
        body.push_str(&")".repeat(n as usize));
        let _ = writeln!(
            s,
            "(define-fun gf_mul ((a (_ BitVec {n})) (b (_ BitVec {n}))) (_ BitVec {n}) {body})"
        );
        s
    }
}

/// Left-nested application of a binary operator; a single term stands alone.
fn fold(op: &str, terms: &[String]) -> String {
    let mut it = terms.iter();
    let mut acc = it.next().cloned().unwrap_or_default();
    for t in it {
        acc = format!("({op} {acc} {t})");
    }
    acc
}

/// Builds the threshold query for `e` at `q`.
pub fn encode_psi(e: &Expr, q: Ratio<u64>, d: &DomainConfig, profile: SmtProfile) -> Result<SmtQuery, SmtError> {
    let vars = e.vars();
    let randoms: Vec<&Var> = vars.iter().filter(|v| v.is_random()).collect();
    let m = randoms.len() as u32 * d.bits();
    if m > MAX_COPY_BITS {
        return Err(SmtError::TooManyCopies { m });
    }
    let publics: Vec<Var> = vars.iter().filter(|v| v.class() == VarClass::Public).cloned().collect();
    let secrets: Vec<Var> = vars.iter().filter(|v| v.class() == VarClass::Secret).cloned().collect();
    let n = d.bits();
    let delta = delta(q, m);
    let em = Emitter {
        d,
        uses_gf: e.postorder().iter().any(|x| matches!(x.kind(), ExprKind::Binary(Op::GfMul, ..))),
    };
    let mut s = String::new();
    let _ = writeln!(s, "; threshold q = {}/{}, m = {m}, delta = {delta}", q.numer(), q.denom());
    s.push_str(match profile {
        SmtProfile::Bv => "(set-logic QF_BV)\n",
        SmtProfile::Int => "(set-logic ALL)\n",
    });
    if em.uses_gf {
        s.push_str(&em.gf_mul_defs());
    }
    for v in &publics {
        let _ = writeln!(s, "(declare-fun {} () (_ BitVec {n}))", quoted(v.name()));
    }
    for v in &secrets {
        let _ = writeln!(s, "(declare-fun {} () (_ BitVec {n}))", quoted(v.name()));
        let _ = writeln!(s, "(declare-fun {} () (_ BitVec {n}))", primed(v.name()));
    }
    let _ = writeln!(s, "(declare-fun $c () (_ BitVec {n}))");
    let width = m + 2;
    let (ind_sort, one, zero) = match profile {
        SmtProfile::Bv => (format!("(_ BitVec {width})"), bv_const(1, width), bv_const(0, width)),
        SmtProfile::Int => ("Int".to_string(), "1".to_string(), "0".to_string()),
    };
    let copies = 1u64 << m;
    let mut values = vec![0 as Value; randoms.len()];
    let mut sums = (Vec::new(), Vec::new());
    for f in 0..copies {
        let mut rest = f;
        for slot in values.iter_mut().rev() {
            *slot = (rest % u64::from(d.size())) as Value;
            rest /= u64::from(d.size());
        }
        let fixed: HashMap<&Var, Value> = randoms.iter().copied().zip(values.iter().copied()).collect();
        let _ = writeln!(s, "; f = {f}");
        for (prefix, ind, rename, acc) in [
            ("c", "I", &quoted as &dyn Fn(&str) -> String, &mut sums.0),
            ("cp", "Ip", &primed as &dyn Fn(&str) -> String, &mut sums.1),
        ] {
            let c = format!("${prefix}_{f}");
            let i = format!("${ind}_{f}");
            let _ = writeln!(s, "(declare-fun {c} () (_ BitVec {n}))");
            let _ = writeln!(s, "(assert (= {c} {}))", em.term(e, &fixed, rename));
            let _ = writeln!(s, "(declare-fun {i} () {ind_sort})");
            let _ = writeln!(s, "(assert (= {i} (ite (= $c {c}) {one} {zero})))");
            acc.push(i);
        }
    }
    match profile {
        SmtProfile::Bv => {
            let lhs = fold("bvadd", &sums.0);
            let rhs = fold("bvadd", &sums.1);
            let _ = writeln!(s, "(assert (bvugt {lhs} (bvadd {rhs} {})))", bv_const(delta, width));
        }
        SmtProfile::Int => {
            let lhs = fold("+", &sums.0);
            let rhs = fold("+", &sums.1);
            let _ = writeln!(s, "(assert (> (- {lhs} {rhs}) {delta}))");
        }
    }
    s.push_str("(check-sat)\n");
    let mut wanted: Vec<String> = publics.iter().map(|v| quoted(v.name())).collect();
    for v in &secrets {
        wanted.push(quoted(v.name()));
        wanted.push(primed(v.name()));
    }
    wanted.push("$c".to_string());
    let _ = writeln!(s, "(get-value ({}))", wanted.join(" "));
    Ok(SmtQuery {
        text: s,
        q,
        m,
        delta,
        publics,
        secrets,
    })
}

/// How to run the external solver.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Executable plus leading arguments; the script path is appended.
    pub cmd: String,
    pub profile: SmtProfile,
    pub timeout: Duration,
    /// Directory receiving one script per query.
    pub emit_dir: Option<PathBuf>,
}

impl SolverConfig {
    pub fn new(cmd: impl Into<String>) -> SolverConfig {
        SolverConfig {
            cmd: cmd.into(),
            profile: SmtProfile::Bv,
            timeout: Duration::from_secs(60),
            emit_dir: None,
        }
    }
}

/// Looks for a solver on `PATH` (`z3`, then `cvc5`).
pub fn find_solver() -> Option<String> {
    let path = std::env::var_os("PATH")?;
    for name in ["z3", "cvc5"] {
        for dir in std::env::split_paths(&path) {
            if dir.join(name).is_file() {
                return Some(name.to_string());
            }
        }
    }
    None
}

/// Runs one query.
pub fn check_sat(query: &SmtQuery, cmd: &str, timeout: Duration) -> Result<SolverVerdict, SmtError> {
    let mut file = tempfile::Builder::new().prefix("masq").suffix(".smt2").tempfile()?;
    file.write_all(query.text.as_bytes())?;
    file.flush()?;
    run_solver(file.path(), cmd, timeout)
}

fn run_solver(script: &Path, cmd: &str, timeout: Duration) -> Result<SolverVerdict, SmtError> {
    let mut parts = cmd.split_whitespace();
    let spawn_err = |reason: String| SmtError::SolverSpawnFailure {
        cmd: cmd.to_string(),
        reason,
    };
    let program = parts.next().ok_or_else(|| spawn_err("empty command".into()))?;
    let start = Instant::now();
    let mut child = Command::new(program)
        .args(parts)
        .arg(script)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| spawn_err(e.to_string()))?;
    let status = child.wait_timeout(timeout)?;
    let elapsed = start.elapsed();
    if status.is_none() {
        let _ = child.kill();
        let _ = child.wait();
        return Ok(SolverVerdict {
            result: SatResult::Unknown("timeout".into()),
            elapsed,
            model: HashMap::new(),
        });
    }
    let mut out = String::new();
    let mut err = String::new();
    if let Some(mut o) = child.stdout.take() {
        o.read_to_string(&mut out)?;
    }
    if let Some(mut e) = child.stderr.take() {
        e.read_to_string(&mut err)?;
    }
    let first = out.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let result = match first {
        "sat" => SatResult::Sat,
        "unsat" => SatResult::Unsat,
        other => {
            let reason = if other.is_empty() { err.trim() } else { other };
            SatResult::Unknown(reason.to_string())
        }
    };
    let model = if result == SatResult::Sat {
        parse_values(&out)
    } else {
        HashMap::new()
    };
    Ok(SolverVerdict { result, elapsed, model })
}

/// Extracts `(name value)` pairs from `get-value` output.
fn parse_values(out: &str) -> HashMap<String, Value> {
    let mut toks = Vec::new();
    let mut chars = out.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' | ')' => {
                toks.push(c.to_string());
                chars.next();
            }
            '|' => {
                chars.next();
                let mut s = String::new();
                for c in chars.by_ref() {
                    if c == '|' {
                        break;
                    }
                    s.push(c);
                }
                toks.push(s);
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c == '(' || c == ')' || c.is_whitespace() {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                toks.push(s);
            }
        }
    }
    let mut model = HashMap::new();
    let mut i = 0;
    while i + 3 < toks.len() {
        if toks[i] == "(" && toks[i + 1] != "(" && toks[i + 1] != ")" {
            let name = &toks[i + 1];
            let val = if let Some(h) = toks[i + 2].strip_prefix("#x") {
                u32::from_str_radix(h, 16).ok()
            } else if let Some(b) = toks[i + 2].strip_prefix("#b") {
                u32::from_str_radix(b, 2).ok()
            } else if toks[i + 2] == "(" && toks.get(i + 3).is_some_and(|t| t == "_") {
                toks.get(i + 4).and_then(|t| t.strip_prefix("bv")).and_then(|v| v.parse().ok())
            } else {
                None
            };
            if let Some(v) = val {
                model.insert(name.clone(), v);
            }
        }
        i += 1;
    }
    model
}

/// Result of the binary search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmtQms {
    pub qms: Qms,
    pub queries: u32,
}

/// Computes QMS exactly by binary search over thresholds `mid / 2^m`.
/// `label` names the emitted scripts.
pub fn qms_smt(e: &Expr, d: &DomainConfig, solver: &SolverConfig, label: &str) -> Result<SmtQms, SmtError> {
    let m = e.rvars().len() as u32 * d.bits();
    if m > MAX_COPY_BITS {
        return Err(SmtError::TooManyCopies { m });
    }
    let den = 1u64 << m;
    let (mut low, mut high) = (0u64, den);
    let mut queries = 0;
    let mut witness = None;
    while low < high {
        let mid = (low + high).div_ceil(2);
        let query = encode_psi(e, Ratio::new_raw(mid, den), d, solver.profile)?;
        queries += 1;
        let verdict = match &solver.emit_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{label}_q{mid}_{den}.smt2"));
                std::fs::write(&path, &query.text)?;
                run_solver(&path, &solver.cmd, solver.timeout)?
            }
            None => check_sat(&query, &solver.cmd, solver.timeout)?,
        };
        match verdict.result {
            SatResult::Sat => {
                high = mid - 1;
                witness = Some(model_witness(&query, &verdict.model));
            }
            SatResult::Unsat => low = mid,
            SatResult::Unknown(reason) => return Err(SmtError::InconclusiveSolver(reason)),
        }
    }
    Ok(SmtQms {
        qms: Qms {
            num: low,
            den,
            witness: witness.filter(|_| low < den),
        },
        queries,
    })
}

fn model_witness(query: &SmtQuery, model: &HashMap<String, Value>) -> Witness {
    let get = |k: &str| model.get(k).copied().unwrap_or(0);
    let publics = query.publics.iter().map(|v| (v.clone(), get(v.name())));
    let sigma1 = publics
        .clone()
        .chain(query.secrets.iter().map(|v| (v.clone(), get(v.name()))))
        .collect();
    let sigma2 = publics
        .chain(query.secrets.iter().map(|v| (v.clone(), get(&format!("{}'", v.name())))))
        .collect();
    Witness {
        sigma1: Valuation(sigma1),
        sigma2: Valuation(sigma2),
        c: get("$c"),
    }
}
