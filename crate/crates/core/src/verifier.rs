//! Hybrid verification: type inference, then reductions, then oracles, then
//! exact counting, with resolved types propagated to later variables.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{CountError, Counter, Qms, Witness, DEFAULT_BUDGET};
use crate::domain::DomainConfig;
use crate::expr::Expr;
use crate::program::Program;
use crate::reduce::{OracleRegistry, Simplifier};
use crate::smt::{self, SatResult, SmtError, SolverConfig};
use crate::types::{DistType, Rule, TypeChecker};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    /// Type inference only; unresolved variables stay UKD.
    TypeOnly,
    /// Hybrid with exact brute-force counting.
    Bruteforce,
    /// Hybrid with an external SMT solver, falling back to brute force.
    Smt,
}

impl EngineKind {
    pub fn parse(s: &str) -> Option<EngineKind> {
        match s {
            "type-only" => Some(EngineKind::TypeOnly),
            "bruteforce" | "hybrid-bruteforce" => Some(EngineKind::Bruteforce),
            "smt" | "hybrid-smt" => Some(EngineKind::Smt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::TypeOnly => "type-only",
            EngineKind::Bruteforce => "bruteforce",
            EngineKind::Smt => "smt",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub domain: DomainConfig,
    pub engine: EngineKind,
    /// Also compute QMS for every variable.
    pub qms: bool,
    pub budget: u64,
    /// Per-variable limit on counting.
    pub timeout: Option<Duration>,
    pub jobs: usize,
    pub solver: Option<SolverConfig>,
    pub simplifier: Simplifier,
    pub oracles: OracleRegistry,
    /// Analyze variables concurrently against the initial store.
    pub parallel_vars: bool,
    /// Record elapsed times in the report.
    pub timings: bool,
}

impl EngineConfig {
    pub fn new(domain: DomainConfig, engine: EngineKind) -> EngineConfig {
        EngineConfig {
            domain,
            engine,
            qms: false,
            budget: DEFAULT_BUDGET,
            timeout: Some(Duration::from_secs(60)),
            jobs: 1,
            solver: None,
            simplifier: Simplifier::default(),
            oracles: OracleRegistry::new(),
            parallel_vars: false,
            timings: false,
        }
    }

    fn counter(&self) -> Counter {
        Counter::new(&self.domain)
            .with_budget(self.budget)
            .with_timeout(self.timeout)
            .with_jobs(self.jobs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TypeRule,
    ReducedTypeRule,
    Oracle,
    CountingSmt,
    CountingBruteforce,
    /// Counting was attempted but did not finish.
    Inconclusive,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::TypeRule => "type-rule",
            Method::ReducedTypeRule => "reduced-type-rule",
            Method::Oracle => "oracle",
            Method::CountingSmt => "counting-smt",
            Method::CountingBruteforce => "counting-bruteforce",
            Method::Inconclusive => "inconclusive",
        })
    }
}

/// A rational `num/den` over its canonical denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn ratio(self) -> Ratio<u64> {
        Ratio::new(self.num, self.den)
    }
}

impl From<&Qms> for Fraction {
    fn from(q: &Qms) -> Fraction {
        Fraction { num: q.num, den: q.den }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.num == self.den {
            write!(f, "1")
        } else {
            write!(f, "{}/{} ({:.3})", self.num, self.den, self.value())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableVerdict {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: DistType,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qms: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub rule_trace: Vec<Rule>,
    /// Why the verdict is inconclusive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub internals: usize,
    pub rud: usize,
    pub sid: usize,
    pub sdd: usize,
    pub ukd: usize,
    /// Variables decided by model counting.
    pub counted: usize,
    pub inconclusive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub program: String,
    pub bits: u32,
    /// Field polynomial as `0x..`.
    pub poly: String,
    pub engine: EngineKind,
    pub variables: Vec<VariableVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program_qms: Option<Fraction>,
    pub perfectly_masked: bool,
    pub totals: Totals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl Report {
    /// 0 perfectly masked, 1 leaky or unresolved, 3 inconclusive.
    pub fn exit_code(&self) -> i32 {
        if self.totals.sdd > 0 {
            1
        } else if self.totals.inconclusive > 0 {
            3
        } else if self.perfectly_masked {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Report> {
        serde_json::from_str(s)
    }

    pub fn verdict(&self, name: &str) -> Option<&VariableVerdict> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "program {}  n={}  poly={}  engine={}",
            self.program,
            self.bits,
            self.poly,
            self.engine.name()
        );
        let width = self.variables.iter().map(|v| v.name.len()).max().unwrap_or(0).max(3);
        let with_qms = self.variables.iter().any(|v| v.qms.is_some());
        let _ = write!(s, "{:width$}  {:4}  {:19}", "var", "type", "method");
        if with_qms {
            s.push_str("  qms");
        }
        s.push('\n');
        for v in &self.variables {
            let _ = write!(s, "{:width$}  {:4}  {:19}", v.name, v.ty.to_string(), v.method.to_string());
            if let Some(q) = v.qms {
                let _ = write!(s, "  {q}");
            }
            if let Some(n) = &v.note {
                let _ = write!(s, "  ({n})");
            }
            if let Some(ms) = v.elapsed_ms {
                let _ = write!(s, "  {ms:.1}ms");
            }
            s.push('\n');
            if let Some(w) = &v.witness {
                let _ = writeln!(s, "{:width$}    witness: {w}", "");
            }
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "internals {}  RUD {}  SID {}  SDD {}  UKD {}  counted {}  inconclusive {}",
            t.internals, t.rud, t.sid, t.sdd, t.ukd, t.counted, t.inconclusive
        );
        if let Some(q) = self.program_qms {
            let _ = writeln!(s, "program QMS: {q}");
        }
        let _ = writeln!(
            s,
            "perfectly masked: {}",
            if self.perfectly_masked { "yes" } else { "no" }
        );
        if let Some(tm) = &self.timings {
            let _ = writeln!(s, "total time: {:.1}ms", tm.total_ms);
        }
        s.lines().map(|l| l.trim_end().to_string() + "\n").collect()
    }
}

/// Outcome of analyzing one variable, before QMS.
struct Analysis {
    ty: DistType,
    method: Method,
    rule_trace: Vec<Rule>,
    /// The expression counting and QMS operate on.
    reduced: Expr,
    qms: Option<Qms>,
    note: Option<String>,
    /// Types to record in the propagation store.
    learned: Vec<(Expr, DistType)>,
}

struct Verifier<'a> {
    cfg: &'a EngineConfig,
    counter: Counter,
    /// Exact QMS per reduced expression.
    memo: HashMap<Expr, Qms>,
}

fn count_note(e: &CountError) -> String {
    e.to_string()
}

impl<'a> Verifier<'a> {
    fn new(cfg: &'a EngineConfig) -> Self {
        Verifier {
            cfg,
            counter: cfg.counter(),
            memo: HashMap::new(),
        }
    }

    fn exact(&mut self, e: &Expr) -> Result<Qms, CountError> {
        if let Some(q) = self.memo.get(e) {
            return Ok(q.clone());
        }
        let q = self.counter.qms_exact(e)?;
        self.memo.insert(e.clone(), q.clone());
        Ok(q)
    }

    /// Decides SI by counting. Returns the type, method, and the exact QMS
    /// when it came for free.
    fn count(&mut self, e: &Expr) -> Result<(DistType, Method, Option<Qms>), String> {
        if self.cfg.engine == EngineKind::Smt {
            if let Some(solver) = &self.cfg.solver {
                match smt::encode_psi(e, Ratio::new(1, 1), &self.cfg.domain, solver.profile)
                    .and_then(|q| smt::check_sat(&q, &solver.cmd, solver.timeout))
                {
                    Ok(v) if v.result == SatResult::Sat => return Ok((DistType::Sdd, Method::CountingSmt, None)),
                    Ok(v) if v.result == SatResult::Unsat => return Ok((DistType::Sid, Method::CountingSmt, None)),
                    // inconclusive: fall back to brute force
                    Ok(_) | Err(SmtError::TooManyCopies { .. }) | Err(SmtError::InconclusiveSolver(_)) => {}
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
        let q = self.exact(e).map_err(|e| count_note(&e))?;
        let ty = if q.is_one() { DistType::Sid } else { DistType::Sdd };
        Ok((ty, Method::CountingBruteforce, Some(q)))
    }

    fn analyze(&mut self, tc: &mut TypeChecker, e: &Expr) -> Analysis {
        let j = tc.infer(e);
        let done = |ty, method, rule_trace, reduced: &Expr, learned| Analysis {
            ty,
            method,
            rule_trace,
            reduced: reduced.clone(),
            qms: None,
            note: None,
            learned,
        };
        if j.ty != DistType::Ukd || self.cfg.engine == EngineKind::TypeOnly {
            return done(j.ty, Method::TypeRule, j.rule_trace, e, vec![]);
        }
        let reduced = self.cfg.simplifier.simplify(e, &self.cfg.domain);
        let j = tc.infer(&reduced);
        if j.ty != DistType::Ukd {
            return done(
                j.ty,
                Method::ReducedTypeRule,
                j.rule_trace,
                &reduced,
                vec![(e.clone(), j.ty)],
            );
        }
        match self.cfg.oracles.oracle(&reduced) {
            Ok(Some(out)) => {
                let j = tc.infer(&out);
                if j.ty != DistType::Ukd {
                    return done(
                        j.ty,
                        Method::Oracle,
                        j.rule_trace,
                        &out,
                        vec![(e.clone(), j.ty), (reduced.clone(), j.ty)],
                    );
                }
            }
            Ok(None) => {}
            Err(err) => {
                let mut a = done(DistType::Ukd, Method::Inconclusive, vec![Rule::Ukd], &reduced, vec![]);
                a.note = Some(err.to_string());
                return a;
            }
        }
        match self.count(&reduced) {
            Ok((ty, method, qms)) => {
                let mut a = done(ty, method, vec![], &reduced, vec![(e.clone(), ty), (reduced.clone(), ty)]);
                a.qms = qms;
                a
            }
            Err(note) => {
                let mut a = done(DistType::Ukd, Method::Inconclusive, vec![Rule::Ukd], &reduced, vec![]);
                a.note = Some(note);
                a
            }
        }
    }

    /// QMS for a resolved variable.
    fn qms_of(&mut self, a: &Analysis, label: &str) -> Result<Qms, String> {
        match a.ty {
            DistType::Rud | DistType::Sid => Ok(Qms::one()),
            DistType::Ukd => Err("type unresolved".into()),
            DistType::Sdd if a.reduced.rvars().is_empty() => {
                // no randomness left: the value is a function of σ
                let mut q = self.exact(&a.reduced).map_err(|e| count_note(&e))?;
                q.num = 0;
                q.den = 1;
                Ok(q)
            }
            DistType::Sdd => {
                if let Some(q) = &a.qms {
                    return Ok(q.clone());
                }
                if self.cfg.engine == EngineKind::Smt {
                    if let Some(solver) = &self.cfg.solver {
                        match smt::qms_smt(&a.reduced, &self.cfg.domain, solver, label) {
                            Ok(r) => return Ok(r.qms),
                            Err(SmtError::TooManyCopies { .. }) | Err(SmtError::InconclusiveSolver(_)) => {}
                            Err(e) => return Err(e.to_string()),
                        }
                    }
                }
                self.exact(&a.reduced).map_err(|e| count_note(&e))
            }
        }
    }

    fn verdict(&mut self, tc: &mut TypeChecker, name: &str, e: &Expr) -> (VariableVerdict, Vec<(Expr, DistType)>) {
        let start = Instant::now();
        let a = self.analyze(tc, e);
        let mut method = a.method;
        let mut ty = a.ty;
        let mut note = a.note.clone();
        let mut qms = None;
        let mut witness = a.qms.as_ref().and_then(|q| q.witness.clone());
        if self.cfg.qms && ty != DistType::Ukd {
            match self.qms_of(&a, name) {
                Ok(q) => {
                    witness = q.witness.clone().or(witness);
                    qms = Some(Fraction::from(&q));
                }
                Err(n) => {
                    note = Some(n);
                    if ty != DistType::Sdd {
                        ty = DistType::Ukd;
                        method = Method::Inconclusive;
                    }
                }
            }
        }
        let v = VariableVerdict {
            name: name.to_string(),
            ty,
            method,
            qms,
            witness,
            rule_trace: a.rule_trace,
            note,
            elapsed_ms: self.cfg.timings.then(|| start.elapsed().as_secs_f64() * 1e3),
        };
        (v, a.learned)
    }
}

/// Checks every internal variable; with `cfg.qms` also computes QMS.
pub fn pm_check(p: &Program, cfg: &EngineConfig) -> Report {
    let start = Instant::now();
    let names: Vec<&str> = p.internals().collect();
    let exprs: Vec<&Expr> = names
        .iter()
        .map(|x| p.expr_of(x).expect("internal variable"))
        .collect();
    let variables: Vec<VariableVerdict> = if cfg.parallel_vars {
        let run = || {
            names
                .par_iter()
                .zip(&exprs)
                .map(|(x, e)| {
                    let mut v = Verifier::new(cfg);
                    v.counter = Counter::new(&cfg.domain)
                        .with_budget(cfg.budget)
                        .with_timeout(cfg.timeout);
                    v.verdict(&mut TypeChecker::new(), x, e).0
                })
                .collect()
        };
        match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    } else {
        let mut v = Verifier::new(cfg);
        let mut tc = TypeChecker::new();
        let mut out = Vec::with_capacity(names.len());
        for (x, e) in names.iter().zip(&exprs) {
            let (verdict, learned) = v.verdict(&mut tc, x, e);
            for (e, ty) in learned {
                tc.record(&e, ty);
            }
            out.push(verdict);
        }
        out
    };
    let mut totals = Totals {
        internals: variables.len(),
        ..Totals::default()
    };
    for v in &variables {
        match v.ty {
            DistType::Rud => totals.rud += 1,
            DistType::Sid => totals.sid += 1,
            DistType::Sdd => totals.sdd += 1,
            DistType::Ukd => totals.ukd += 1,
        }
        if matches!(v.method, Method::CountingSmt | Method::CountingBruteforce) {
            totals.counted += 1;
        }
        if v.method == Method::Inconclusive {
            totals.inconclusive += 1;
        }
    }
    let program_qms = if cfg.qms && !variables.is_empty() && variables.iter().all(|v| v.qms.is_some()) {
        variables
            .iter()
            .filter_map(|v| v.qms)
            .min_by(|a, b| a.ratio().cmp(&b.ratio()))
    } else if cfg.qms && variables.is_empty() {
        Some(Fraction { num: 1, den: 1 })
    } else {
        None
    };
    let perfectly_masked = variables.iter().all(|v| v.ty.is_masked());
    Report {
        version: REPORT_VERSION,
        program: p.name().to_string(),
        bits: cfg.domain.bits(),
        poly: format!("{:#x}", cfg.domain.poly()),
        engine: cfg.engine,
        variables,
        program_qms,
        perfectly_masked,
        totals,
        timings: cfg.timings.then(|| Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        }),
    }
}

/// [`pm_check`] with QMS computation switched on.
pub fn qms_compute(p: &Program, cfg: &EngineConfig) -> Report {
    let mut cfg = cfg.clone();
    cfg.qms = true;
    pm_check(p, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_domain;

    const CUBE: &str = include_str!("../corpus/cube.mv");
    const REFRESHED: &str = include_str!("../corpus/cube_refreshed.mv");
    const SECMULT: &str = include_str!("../corpus/secmult.mv");

    fn cfg(bits: u32, engine: EngineKind) -> EngineConfig {
        EngineConfig::new(make_domain(bits, None).unwrap(), engine)
    }

    fn types(r: &Report) -> Vec<(String, DistType)> {
        r.variables.iter().map(|v| (v.name.clone(), v.ty)).collect()
    }

    #[test]
    fn cube_type_only() {
        let p = Program::parse(CUBE).unwrap();
        let r = pm_check(&p, &cfg(8, EngineKind::TypeOnly));
        let ukd: Vec<&str> = r
            .variables
            .iter()
            .filter(|v| v.ty == DistType::Ukd)
            .map(|v| v.name.as_str())
            .collect();
        assert_eq!(ukd, ["x2", "x3", "x6"]);
        assert!(!r.perfectly_masked);
        assert_eq!(r.exit_code(), 1);
        assert_eq!(r.totals.counted, 0);
    }

    #[test]
    fn cube_hybrid() {
        let p = Program::parse(CUBE).unwrap();
        let r = pm_check(&p, &cfg(8, EngineKind::Bruteforce));
        let sdd: Vec<&str> = r
            .variables
            .iter()
            .filter(|v| v.ty == DistType::Sdd)
            .map(|v| v.name.as_str())
            .collect();
        assert_eq!(sdd, ["x2", "x3"]);
        assert_eq!(r.totals.counted, 2);
        let x6 = r.verdict("x6").unwrap();
        assert_eq!((x6.ty, x6.method), (DistType::Sid, Method::ReducedTypeRule));
        assert_eq!(x6.rule_trace, [Rule::NoKey]);
        assert_eq!(r.totals.ukd, 0);
        assert_eq!(r.exit_code(), 1);
    }

    #[test]
    fn cube_qms() {
        let p = Program::parse(CUBE).unwrap();
        let r = qms_compute(&p, &cfg(8, EngineKind::Bruteforce));
        let x2 = r.verdict("x2").unwrap();
        let x3 = r.verdict("x3").unwrap();
        assert_eq!(x2.qms.unwrap().ratio(), Ratio::new(253, 256));
        assert_eq!(x3.qms.unwrap().ratio(), Ratio::new(253, 256));
        assert!(x2.witness.is_some());
        for v in &r.variables {
            if v.ty.is_masked() {
                assert_eq!(v.qms, Some(Fraction { num: 1, den: 1 }), "{}", v.name);
            }
        }
        assert_eq!(r.program_qms.unwrap().ratio(), Ratio::new(253, 256));
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn positive_controls() {
        for src in [REFRESHED, SECMULT] {
            let p = Program::parse(src).unwrap();
            let r = qms_compute(&p, &cfg(8, EngineKind::Bruteforce));
            assert!(r.perfectly_masked, "{}", r.to_text());
            assert_eq!(r.exit_code(), 0);
            assert_eq!(r.program_qms, Some(Fraction { num: 1, den: 1 }));
            assert_eq!(r.totals.counted, 0);
        }
    }

    #[test]
    fn trivial_programs() {
        let p = Program::parse("fn F(k: secret, r0: random) { y = r0; return y; }").unwrap();
        let r = pm_check(&p, &cfg(8, EngineKind::Bruteforce));
        assert_eq!(types(&r), [("y".to_string(), DistType::Rud)]);
        assert_eq!(r.variables[0].method, Method::TypeRule);
        let p = Program::parse("fn F(k: secret) { y = k; return y; }").unwrap();
        let r = qms_compute(&p, &cfg(8, EngineKind::Bruteforce));
        assert_eq!(r.variables[0].qms, Some(Fraction { num: 0, den: 1 }));
        assert_eq!(r.exit_code(), 1);
    }

    #[test]
    fn budget_is_inconclusive() {
        let p = Program::parse(CUBE).unwrap();
        let mut c = cfg(8, EngineKind::Bruteforce);
        c.budget = 1 << 10;
        let r = pm_check(&p, &c);
        assert_eq!(r.totals.inconclusive, 2);
        assert_eq!(r.exit_code(), 3);
        assert!(r.verdict("x2").unwrap().note.as_deref().unwrap().contains("budget"));
    }

    #[test]
    fn parallel_vars_agree() {
        let p = Program::parse(CUBE).unwrap();
        let mut c = cfg(4, EngineKind::Bruteforce);
        c.qms = true;
        let serial = pm_check(&p, &c);
        c.parallel_vars = true;
        c.jobs = 4;
        let par = pm_check(&p, &c);
        assert_eq!(types(&serial), types(&par));
        assert_eq!(serial.program_qms, par.program_qms);
        assert_eq!(serial.to_json(), par.to_json());
    }

    #[test]
    fn smt_engine_agrees() {
        let Some(solver) = smt::find_solver() else {
            return;
        };
        let p = Program::parse(CUBE).unwrap();
        let mut c = cfg(2, EngineKind::Bruteforce);
        c.qms = true;
        let bf = pm_check(&p, &c);
        c.engine = EngineKind::Smt;
        c.solver = Some(SolverConfig::new(solver));
        let sm = pm_check(&p, &c);
        assert_eq!(types(&bf), types(&sm));
        let q = |r: &Report| r.variables.iter().map(|v| v.qms.map(|f| f.ratio())).collect::<Vec<_>>();
        assert_eq!(q(&bf), q(&sm));
    }
}
