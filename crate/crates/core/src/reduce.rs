//! Distribution-preserving simplification of expressions.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::domain::{make_domain, DomainConfig, Op, Value};
use crate::expr::{Compiled, Expr, ExprKind, Interner, Var, VarClass};
use crate::program::{ParseError, Parser};
use crate::types::TypeChecker;

/// Exhaustive effectiveness checks are done up to this many input bits.
pub const EFFECTIVE_BUDGET_BITS: u32 = 20;

const MAX_ROUNDS: usize = 64;

/// Re-interns every node so structurally equal subtrees share one pointer.
fn canonical(e: &Expr) -> Expr {
    let mut interner = Interner::new();
    e.rewrite(&mut interner, |i, n| i.intern(n))
}

/// How many times each distinct node occurs in the tree of `e`.
fn multiplicities(e: &Expr) -> HashMap<Expr, u64> {
    let order = e.postorder();
    let mut mult: HashMap<Expr, u64> = HashMap::new();
    mult.insert(e.clone(), 1);
    let mut seen = HashSet::new();
    for node in order.iter().rev() {
        if !seen.insert(node.clone()) {
            continue;
        }
        let m = mult.get(node).copied().unwrap_or(0);
        for c in node.children() {
            let slot = mult.entry(c.clone()).or_insert(0);
            *slot = slot.saturating_add(m);
        }
    }
    mult
}

fn total_bits(vars: usize, d: &DomainConfig) -> u64 {
    vars as u64 * u64::from(d.bits())
}

/// Whether some valuation of the other variables makes `e` depend on `x`.
///
/// Decided exhaustively within [`EFFECTIVE_BUDGET_BITS`]; beyond that (or if
/// `e` does not fit the domain) `x` is conservatively treated as effective.
pub fn is_effective(x: &Var, e: &Expr, d: &DomainConfig) -> bool {
    let vars = e.vars();
    if !vars.contains(x) {
        return false;
    }
    if total_bits(vars.len(), d) > u64::from(EFFECTIVE_BUDGET_BITS) {
        return true;
    }
    let mut order: Vec<Var> = vars.iter().filter(|v| *v != x).cloned().collect();
    order.push(x.clone());
    let Ok(prog) = Compiled::new(e, &order, 1, d) else {
        return true;
    };
    if !prog.output_varies() {
        return false;
    }
    let size = u64::from(d.size());
    let outer = size.pow(order.len() as u32 - 1);
    let mut input = vec![0 as Value; order.len()];
    let mut regs = prog.scratch();
    let last = order.len() - 1;
    for idx in 0..outer {
        let mut rest = idx;
        for slot in input.iter_mut().take(last) {
            *slot = (rest % size) as Value;
            rest /= size;
        }
        prog.eval_fixed(&input, &mut regs);
        input[last] = 0;
        let first = prog.eval_varying(&input, &mut regs);
        for c in 1..d.size() {
            input[last] = c;
            if prog.eval_varying(&input, &mut regs) != first {
                return true;
            }
        }
    }
    false
}

/// Instantiates every ineffective variable by 0.
pub fn eliminate_ineffective(e: &Expr, d: &DomainConfig) -> Expr {
    let vars = e.vars();
    if total_bits(vars.len(), d) > u64::from(EFFECTIVE_BUDGET_BITS) {
        return e.clone();
    }
    let zero = Expr::constant(0);
    let map: HashMap<Var, Expr> = vars
        .iter()
        .filter(|v| !is_effective(v, e, d))
        .map(|v| (v.clone(), zero.clone()))
        .collect();
    if map.is_empty() {
        e.clone()
    } else {
        e.substitute(&map)
    }
}

fn law(i: &mut Interner, e: Expr) -> Expr {
    match e.kind() {
        ExprKind::Not(a) => match a.kind() {
            ExprKind::Not(inner) => inner.clone(),
            _ => e,
        },
        ExprKind::Binary(op, a, b) => {
            let (ca, cb) = (a.as_const(), b.as_const());
            match op {
                Op::Xor | Op::Sub if a == b => i.constant(0),
                Op::Mul | Op::GfMul | Op::And if ca == Some(0) || cb == Some(0) => i.constant(0),
                Op::Xor if cb == Some(0) => a.clone(),
                Op::Xor if ca == Some(0) => b.clone(),
                Op::Mul | Op::GfMul if cb == Some(1) => a.clone(),
                Op::Mul | Op::GfMul if ca == Some(1) => b.clone(),
                _ => e,
            }
        }
        _ => e,
    }
}

/// Rewrites with `e⊕e→0`, `e−e→0`, `e∘0→0` (∘ ∈ {×,⊙,∧}), `e⊕0→e`,
/// `e∘1→e` (∘ ∈ {×,⊙}) and `¬¬e→e` until nothing changes.
pub fn apply_algebraic_laws(e: &Expr) -> Expr {
    let mut cur = e.clone();
    let mut interner = Interner::seeded(e);
    for _ in 0..MAX_ROUNDS {
        let next = cur.rewrite(&mut interner, law);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Replaces a compound sub-expression by its dominant random variable `r`
/// when `r` occurs nowhere outside that sub-expression, innermost first,
/// until no such sub-expression remains.
pub fn eliminate_dominated(e: &Expr) -> Expr {
    let mut cur = canonical(e);
    loop {
        let mut tc = TypeChecker::new();
        tc.compute_sets(&cur);
        let mult = multiplicities(&cur);
        let mut found = None;
        'search: for node in cur.postorder() {
            if node.children().next().is_none() {
                continue;
            }
            for r in tc.dom_of(&node) {
                let here = mult[&node];
                let total = mult.get(&Expr::var(r.clone())).copied().unwrap_or(0);
                if total == here {
                    found = Some((node.clone(), r.clone()));
                    break 'search;
                }
            }
        }
        match found {
            Some((sub, r)) => cur = cur.replace_subterm(&sub, &Expr::var(r)),
            None => return cur,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: pattern has no `$` random metavariable")]
    NoMetavariable { line: usize },
    #[error("line {line}: replacement uses `{name}`, which the pattern does not bind")]
    Unbound { line: usize, name: String },
    #[error("line {line}: replacement is larger than the pattern")]
    Grows { line: usize },
    #[error("line {line}: pattern and replacement have different distributions")]
    Unsound { line: usize },
}

/// A rewrite `pattern → replacement` valid whenever the random
/// metavariables occur nowhere else in the enclosing expression.
///
/// Metavariables (`$r`) match random variables only; any other identifier
/// matches an arbitrary sub-expression.
#[derive(Debug, Clone)]
pub struct MetaTheorem {
    pattern: Expr,
    replacement: Expr,
}

fn is_meta(v: &Var) -> bool {
    v.name().starts_with('$')
}

impl MetaTheorem {
    pub fn parse(text: &str) -> Result<MetaTheorem, MetaError> {
        Self::parse_line(text, 1)
    }

    fn parse_line(text: &str, line: usize) -> Result<MetaTheorem, MetaError> {
        let parse_err = |source| MetaError::Parse { line, source };
        let mut p = Parser::new(text).map_err(parse_err)?;
        let pat = p.expr().map_err(parse_err)?;
        p.skip_arrow().map_err(parse_err)?;
        let rep = p.expr().map_err(parse_err)?;
        p.expect_eof().map_err(parse_err)?;
        let mut interner = Interner::new();
        let resolve = |name: &str, meta: bool| {
            Ok(if meta {
                Var::random(&format!("${name}"))
            } else {
                Var::secret(name)
            })
        };
        let pattern = pat.to_expr(&mut interner, &resolve).map_err(parse_err)?;
        let replacement = rep.to_expr(&mut interner, &resolve).map_err(parse_err)?;
        let bound = pattern.vars();
        if !bound.iter().any(is_meta) {
            return Err(MetaError::NoMetavariable { line });
        }
        for v in replacement.vars() {
            if !bound.contains(&v) {
                return Err(MetaError::Unbound {
                    line,
                    name: v.name().to_string(),
                });
            }
            if replacement.occurrences(&v) > pattern.occurrences(&v) {
                return Err(MetaError::Grows { line });
            }
        }
        if replacement.size() > pattern.size() {
            return Err(MetaError::Grows { line });
        }
        if spot_check(&pattern, &replacement) == Some(false) {
            return Err(MetaError::Unsound { line });
        }
        Ok(MetaTheorem { pattern, replacement })
    }

    /// `$r ^ ((2 * $r) & e) => $r`
    pub fn builtin() -> Vec<MetaTheorem> {
        vec![Self::parse("$r ^ ((2 * $r) & e) => $r").expect("builtin pattern")]
    }

    pub fn pattern(&self) -> &Expr {
        &self.pattern
    }

    pub fn replacement(&self) -> &Expr {
        &self.replacement
    }

    /// Tries to match at the root of `e`, returning the bindings.
    fn match_root(&self, e: &Expr) -> Option<HashMap<Var, Expr>> {
        let mut binds = HashMap::new();
        matches(&self.pattern, e, &mut binds).then_some(binds)
    }
}

impl fmt::Display for MetaTheorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} => {}", self.pattern, self.replacement)
    }
}

/// Parses a meta-theorem file: one `pattern => replacement` per line,
/// blank lines and `#` / `//` comments ignored.
pub fn parse_meta_theorems(text: &str) -> Result<Vec<MetaTheorem>, MetaError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split("//").next().unwrap_or("");
        let body = body.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            out.push(MetaTheorem::parse_line(body, i + 1)?);
        }
    }
    Ok(out)
}

fn matches(pat: &Expr, e: &Expr, binds: &mut HashMap<Var, Expr>) -> bool {
    match pat.kind() {
        ExprKind::Const(c) => e.as_const() == Some(*c),
        ExprKind::Var(v) => {
            if is_meta(v) && !e.as_var().is_some_and(Var::is_random) {
                return false;
            }
            if let Some(prev) = binds.get(v) {
                return prev == e;
            }
            if is_meta(v) && binds.iter().any(|(w, b)| is_meta(w) && b == e) {
                return false;
            }
            binds.insert(v.clone(), e.clone());
            true
        }
        ExprKind::Not(p) => match e.kind() {
            ExprKind::Not(a) => matches(p, a, binds),
            _ => false,
        },
        ExprKind::Binary(op, pa, pb) => {
            let ExprKind::Binary(eop, a, b) = e.kind() else {
                return false;
            };
            if op != eop {
                return false;
            }
            let mut trial = binds.clone();
            if matches(pa, a, &mut trial) && matches(pb, b, &mut trial) {
                *binds = trial;
                return true;
            }
            if op.is_commutative() {
                let mut trial = binds.clone();
                if matches(pa, b, &mut trial) && matches(pb, a, &mut trial) {
                    *binds = trial;
                    return true;
                }
            }
            false
        }
    }
}

/// Applies meta-theorems innermost first until none applies.
pub fn apply_meta_theorems(e: &Expr, theorems: &[MetaTheorem]) -> Expr {
    if theorems.is_empty() {
        return e.clone();
    }
    let mut cur = canonical(e);
    'outer: loop {
        let mult = multiplicities(&cur);
        for node in cur.postorder() {
            for t in theorems {
                let Some(binds) = t.match_root(&node) else {
                    continue;
                };
                let here = mult[&node];
                let side_ok = binds.iter().filter(|(m, _)| is_meta(m)).all(|(m, bound)| {
                    let r = bound.as_var().expect("metavariables bind variables");
                    let total = mult.get(&Expr::var(r.clone())).copied().unwrap_or(0);
                    total == here.saturating_mul(t.pattern.occurrences(m))
                });
                if side_ok {
                    let with = t.replacement.substitute(&binds);
                    cur = cur.replace_subterm(&node, &with);
                    continue 'outer;
                }
            }
        }
        return cur;
    }
}

/// The reduction pipeline with a configurable meta-theorem table.
#[derive(Debug, Clone)]
pub struct Simplifier {
    theorems: Vec<MetaTheorem>,
}

impl Default for Simplifier {
    fn default() -> Self {
        Simplifier {
            theorems: MetaTheorem::builtin(),
        }
    }
}

impl Simplifier {
    pub fn new(theorems: Vec<MetaTheorem>) -> Self {
        Simplifier { theorems }
    }

    pub fn with_extra(mut self, extra: impl IntoIterator<Item = MetaTheorem>) -> Self {
        self.theorems.extend(extra);
        self
    }

    pub fn theorems(&self) -> &[MetaTheorem] {
        &self.theorems
    }

    /// Fixpoint of ineffective-variable elimination, algebraic laws,
    /// dominated-subexpression elimination and meta-theorems.
    pub fn simplify(&self, e: &Expr, d: &DomainConfig) -> Expr {
        let mut cur = canonical(e);
        for _ in 0..MAX_ROUNDS {
            let next = eliminate_ineffective(&cur, d);
            let next = apply_algebraic_laws(&next);
            let next = eliminate_dominated(&next);
            let next = apply_meta_theorems(&next, &self.theorems);
            if next == cur {
                break;
            }
            cur = next;
        }
        cur
    }
}

/// [`Simplifier::simplify`] with the built-in meta-theorems.
pub fn simplify(e: &Expr, d: &DomainConfig) -> Expr {
    Simplifier::default().simplify(e, d)
}

// ---------------------------------------------------------------------------
// Transformation oracles

/// A user-supplied rewrite that must preserve the distribution of its input
/// for every valuation of the non-random variables.
pub trait Oracle: Send + Sync {
    fn name(&self) -> &str;
    fn rewrite(&self, e: &Expr) -> Option<Expr>;
}

#[derive(Debug, thiserror::Error)]
#[error("oracle `{oracle}` rewrote `{from}` to `{to}`, which has a different distribution")]
pub struct OracleUnsound {
    pub oracle: String,
    pub from: String,
    pub to: String,
}

/// Ordered oracle registry; the first oracle producing a rewrite wins.
#[derive(Clone, Default)]
pub struct OracleRegistry {
    oracles: Vec<Arc<dyn Oracle>>,
}

impl fmt::Debug for OracleRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.oracles.iter().map(|o| o.name())).finish()
    }
}

impl OracleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, oracle: Arc<dyn Oracle>) {
        self.oracles.push(oracle);
    }

    pub fn is_empty(&self) -> bool {
        self.oracles.is_empty()
    }

    /// Asks each oracle in turn. Rewrites are spot-checked for distribution
    /// equivalence at a small width before being returned.
    pub fn oracle(&self, e: &Expr) -> Result<Option<Expr>, OracleUnsound> {
        for o in &self.oracles {
            if let Some(out) = o.rewrite(e) {
                if spot_check(e, &out) == Some(false) {
                    return Err(OracleUnsound {
                        oracle: o.name().to_string(),
                        from: e.to_string(),
                        to: out.to_string(),
                    });
                }
                return Ok(Some(out));
            }
        }
        Ok(None)
    }
}

/// Compares the distributions of `a` and `b` exhaustively at n = 2 (or
/// n = 1 if the constants need it). `None` if neither width fits or the
/// enumeration is too large.
fn spot_check(a: &Expr, b: &Expr) -> Option<bool> {
    for bits in [2, 1] {
        let d = make_domain(bits, None).expect("default widths");
        if a.validate(&d).is_ok() && b.validate(&d).is_ok() {
            return equidistributed(a, b, &d);
        }
    }
    None
}

/// Whether `a` and `b` have the same distribution over the random variables
/// of both, for every valuation of the other variables of both.
pub(crate) fn equidistributed(a: &Expr, b: &Expr, d: &DomainConfig) -> Option<bool> {
    let all: BTreeSet<Var> = a.vars().union(&b.vars()).cloned().collect();
    if total_bits(all.len(), d) > u64::from(EFFECTIVE_BUDGET_BITS) {
        return None;
    }
    let (randoms, fixed): (Vec<Var>, Vec<Var>) = all.into_iter().partition(|v| v.class() == VarClass::Random);
    let varying = randoms.len();
    let order: Vec<Var> = fixed.iter().chain(&randoms).cloned().collect();
    let pa = Compiled::new(a, &order, varying, d).ok()?;
    let pb = Compiled::new(b, &order, varying, d).ok()?;
    let size = u64::from(d.size());
    let mut input = vec![0 as Value; order.len()];
    let (mut ra, mut rb) = (pa.scratch(), pb.scratch());
    let mut hist = vec![0i64; d.size() as usize];
    for outer in 0..size.pow(fixed.len() as u32) {
        let mut rest = outer;
        for slot in input.iter_mut().take(fixed.len()) {
            *slot = (rest % size) as Value;
            rest /= size;
        }
        pa.eval_fixed(&input, &mut ra);
        pb.eval_fixed(&input, &mut rb);
        hist.iter_mut().for_each(|h| *h = 0);
        for inner in 0..size.pow(varying as u32) {
            let mut rest = inner;
            for slot in input.iter_mut().skip(fixed.len()) {
                *slot = (rest % size) as Value;
                rest /= size;
            }
            hist[pa.eval_varying(&input, &mut ra) as usize] += 1;
            hist[pb.eval_varying(&input, &mut rb) as usize] -= 1;
        }
        if hist.iter().any(|&h| h != 0) {
            return Some(false);
        }
    }
    Some(true)
}
