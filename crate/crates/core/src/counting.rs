//! Exact brute-force model counting.
//!
//! Valuations σ of the non-random variables of an expression are indexed in
//! mixed radix over the variables sorted by (class, name): public variables
//! are most significant, so all valuations agreeing on the public inputs form
//! one contiguous group. Lexicographic order on σ coincides with index order.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{DomainConfig, DomainError, Value};
use crate::expr::{Compiled, Expr, Var, VarClass};

/// Default cap on evaluations per expression.
pub const DEFAULT_BUDGET: u64 = 1 << 28;

#[derive(Debug, thiserror::Error)]
pub enum CountError {
    #[error("valuation does not cover variable `{0}`")]
    UncoveredVariable(String),
    #[error("enumeration needs 2^{needed_log2} evaluations, over the budget of {budget}")]
    BudgetExceeded { needed_log2: u32, budget: u64 },
    #[error("counting timed out")]
    Timeout,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// `counts[v]` is the number of random assignments under which the
/// expression evaluates to `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountVector {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl CountVector {
    pub fn is_flat(&self) -> bool {
        let each = self.total / self.counts.len() as u64;
        each * self.counts.len() as u64 == self.total && self.counts.iter().all(|&c| c == each)
    }
}

/// An ordered assignment of values to variables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Valuation(pub Vec<(Var, Value)>);

impl Valuation {
    pub fn get(&self, name: &str) -> Option<Value> {
        self.0.iter().find(|(v, _)| v.name() == name).map(|(_, x)| *x)
    }
}

#[derive(Serialize, Deserialize)]
struct Binding {
    name: String,
    class: VarClass,
    value: Value,
}

impl Serialize for Valuation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for (v, x) in &self.0 {
            seq.serialize_element(&Binding {
                name: v.name().to_string(),
                class: v.class(),
                value: *x,
            })?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Valuation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bindings = Vec::<Binding>::deserialize(d)?;
        Ok(Valuation(
            bindings.into_iter().map(|b| (Var::new(b.name, b.class), b.value)).collect(),
        ))
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, x)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}={x}")?;
        }
        f.write_str("}")
    }
}

/// Two valuations agreeing on public inputs and an output value whose
/// probabilities differ the most.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub sigma1: Valuation,
    pub sigma2: Valuation,
    pub c: Value,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sigma1={} sigma2={} c={}", self.sigma1, self.sigma2, self.c)
    }
}

/// Quantitative masking strength `num/den`, kept over its canonical
/// denominator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qms {
    pub num: u64,
    pub den: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl Qms {
    pub fn one() -> Qms {
        Qms {
            num: 1,
            den: 1,
            witness: None,
        }
    }

    pub fn zero() -> Qms {
        Qms {
            num: 0,
            den: 1,
            witness: None,
        }
    }

    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.num, self.den)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// Compares the rational values, ignoring witnesses.
    pub fn cmp_value(&self, other: &Qms) -> Ordering {
        (u128::from(self.num) * u128::from(other.den)).cmp(&(u128::from(other.num) * u128::from(self.den)))
    }
}

impl fmt::Display for Qms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({:.3})", self.num, self.den, self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stat {
    max: u64,
    argmax: u64,
    min: u64,
    argmin: u64,
}

impl Stat {
    const EMPTY: Stat = Stat {
        max: 0,
        argmax: u64::MAX,
        min: u64::MAX,
        argmin: u64::MAX,
    };

    fn merge(self, o: Stat) -> Stat {
        let (max, argmax) = match self.max.cmp(&o.max) {
            Ordering::Greater => (self.max, self.argmax),
            Ordering::Less => (o.max, o.argmax),
            Ordering::Equal => (self.max, self.argmax.min(o.argmax)),
        };
        let (min, argmin) = match self.min.cmp(&o.min) {
            Ordering::Less => (self.min, self.argmin),
            Ordering::Greater => (o.min, o.argmin),
            Ordering::Equal => (self.min, self.argmin.min(o.argmin)),
        };
        Stat { max, argmax, min, argmin }
    }
}

fn merge_stats(mut a: Vec<Stat>, b: Vec<Stat>) -> Vec<Stat> {
    for (x, y) in a.iter_mut().zip(b) {
        *x = x.merge(y);
    }
    a
}

/// Largest count gap and the smallest `(σ1, σ2, c)` achieving it, with
/// valuations as global indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Gap {
    diff: u64,
    at: Option<(u64, u64, Value)>,
}

impl Gap {
    const NONE: Gap = Gap { diff: 0, at: None };

    fn merge(self, o: Gap) -> Gap {
        match self.diff.cmp(&o.diff) {
            Ordering::Greater => self,
            Ordering::Less => o,
            Ordering::Equal => Gap {
                diff: self.diff,
                at: match (self.at, o.at) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                },
            },
        }
    }
}

/// Variables of `e` in enumeration order: publics, secrets, randoms.
struct Layout {
    publics: Vec<Var>,
    secrets: Vec<Var>,
    randoms: Vec<Var>,
}

impl Layout {
    fn of(e: &Expr) -> Layout {
        let mut l = Layout {
            publics: Vec::new(),
            secrets: Vec::new(),
            randoms: Vec::new(),
        };
        for v in e.vars() {
            match v.class() {
                VarClass::Public => l.publics.push(v),
                VarClass::Secret => l.secrets.push(v),
                VarClass::Random => l.randoms.push(v),
            }
        }
        l
    }

    fn order(&self) -> Vec<Var> {
        self.publics.iter().chain(&self.secrets).chain(&self.randoms).cloned().collect()
    }

    fn fixed(&self) -> usize {
        self.publics.len() + self.secrets.len()
    }

    fn valuation(&self, index: u64, size: u64) -> Valuation {
        let vars: Vec<&Var> = self.publics.iter().chain(&self.secrets).collect();
        let mut vals = vec![0; vars.len()];
        decode(index, size, &mut vals);
        Valuation(vars.into_iter().cloned().zip(vals).collect())
    }
}

/// Writes `index` in base `size` into `out`, most significant digit first.
fn decode(mut index: u64, size: u64, out: &mut [Value]) {
    for slot in out.iter_mut().rev() {
        *slot = (index % size) as Value;
        index /= size;
    }
}

/// Advances `slots` as a base-`size` odometer; false after the last value.
fn advance(slots: &mut [Value], size: u32) -> bool {
    for slot in slots.iter_mut().rev() {
        *slot += 1;
        if *slot < size {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Exact counting with a budget, an optional deadline and a worker pool.
pub struct Counter {
    domain: DomainConfig,
    budget: u64,
    timeout: Option<Duration>,
    pool: Option<rayon::ThreadPool>,
}

impl fmt::Debug for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Counter")
            .field("domain", &self.domain)
            .field("budget", &self.budget)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Counter {
    /// Single-threaded counter with the default budget and no timeout.
    pub fn new(d: &DomainConfig) -> Counter {
        Counter {
            domain: d.clone(),
            budget: DEFAULT_BUDGET,
            timeout: None,
            pool: None,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Counter {
        self.budget = budget;
        self
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Counter {
        self.timeout = timeout;
        self
    }

    /// Uses `jobs` worker threads (1 = serial).
    pub fn with_jobs(mut self, jobs: usize) -> Counter {
        self.pool = (jobs > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool")
        });
        self
    }

    pub fn domain(&self) -> &DomainConfig {
        &self.domain
    }

    fn check_budget(&self, vars: usize) -> Result<(), CountError> {
        let bits = vars as u32 * self.domain.bits();
        if bits >= 64 || (1u64 << bits) > self.budget {
            return Err(CountError::BudgetExceeded {
                needed_log2: bits,
                budget: self.budget,
            });
        }
        Ok(())
    }

    /// Count vector of `e` for one valuation of its non-random variables.
    pub fn distribution(&self, e: &Expr, sigma: &HashMap<Var, Value>) -> Result<CountVector, CountError> {
        let layout = Layout::of(e);
        let fixed: Vec<&Var> = layout.publics.iter().chain(&layout.secrets).collect();
        let mut input = Vec::with_capacity(fixed.len() + layout.randoms.len());
        for v in fixed {
            match sigma.get(v) {
                Some(&x) => input.push(x),
                None => return Err(CountError::UncoveredVariable(v.name().to_string())),
            }
        }
        for &x in &input {
            if !self.domain.contains(x) {
                return Err(DomainError::ConstOutOfRange {
                    value: x,
                    bits: self.domain.bits(),
                }
                .into());
            }
        }
        self.check_budget(layout.randoms.len())?;
        let prog = Compiled::new(e, &layout.order(), layout.randoms.len(), &self.domain)?;
        input.resize(layout.fixed() + layout.randoms.len(), 0);
        let mut regs = prog.scratch();
        let mut counts = vec![0u64; self.domain.size() as usize];
        prog.eval_fixed(&input, &mut regs);
        count_into(&prog, &mut input, layout.fixed(), self.domain.size(), &mut regs, &mut counts);
        let total = counts.iter().sum();
        Ok(CountVector { counts, total })
    }

    /// True iff every valuation yields the uniform distribution.
    pub fn check_uniform(&self, e: &Expr) -> Result<bool, CountError> {
        let layout = Layout::of(e);
        if layout.randoms.is_empty() {
            return Ok(false);
        }
        let mut flat = true;
        self.scan(e, &layout, |_, counts| {
            let each = counts[0];
            if counts.iter().any(|&c| c != each) {
                flat = false;
            }
            flat
        })?;
        Ok(flat)
    }

    /// True iff all valuations agreeing on public inputs give the same
    /// distribution; otherwise a witness pair.
    pub fn check_si(&self, e: &Expr) -> Result<(bool, Option<(Valuation, Valuation)>), CountError> {
        let q = self.qms_exact(e)?;
        Ok(match q.witness {
            None => (true, None),
            Some(w) => (false, Some((w.sigma1, w.sigma2))),
        })
    }

    /// Serial scan over all valuations; `f` gets the valuation index and the
    /// count vector and returns false to stop early.
    fn scan(&self, e: &Expr, layout: &Layout, mut f: impl FnMut(u64, &[u64]) -> bool) -> Result<(), CountError> {
        self.check_budget(layout.fixed() + layout.randoms.len())?;
        let prog = Compiled::new(e, &layout.order(), layout.randoms.len(), &self.domain)?;
        let size = self.domain.size();
        let deadline = self.timeout.map(|t| Instant::now() + t);
        let fixed = layout.fixed();
        let mut input = vec![0; fixed + layout.randoms.len()];
        let mut regs = prog.scratch();
        let mut counts = vec![0u64; size as usize];
        let sigmas = u64::from(size).pow(fixed as u32);
        for idx in 0..sigmas {
            if deadline.is_some_and(|d| idx % 256 == 0 && Instant::now() > d) {
                return Err(CountError::Timeout);
            }
            decode(idx, u64::from(size), &mut input[..fixed]);
            prog.eval_fixed(&input, &mut regs);
            counts.iter_mut().for_each(|c| *c = 0);
            count_into(&prog, &mut input, fixed, size, &mut regs, &mut counts);
            if !f(idx, &counts) {
                break;
            }
        }
        Ok(())
    }

    /// Exact QMS over the canonical denominator `2^(n·|RVar(e)|)`, with the
    /// lexicographically smallest witness when below 1.
    pub fn qms_exact(&self, e: &Expr) -> Result<Qms, CountError> {
        let layout = Layout::of(e);
        if layout.randoms.is_empty() && !e.has_class(VarClass::Secret) {
            return Ok(Qms::one());
        }
        self.check_budget(layout.fixed() + layout.randoms.len())?;
        let prog = Compiled::new(e, &layout.order(), layout.randoms.len(), &self.domain)?;
        let size = u64::from(self.domain.size());
        let groups = size.pow(layout.publics.len() as u32);
        let per_group = size.pow(layout.secrets.len() as u32);
        let den = size.pow(layout.randoms.len() as u32);
        let deadline = self.timeout.map(|t| Instant::now() + t);
        let cancelled = AtomicBool::new(false);
        let job = GroupJob {
            prog: &prog,
            fixed: layout.fixed(),
            size: self.domain.size(),
            per_group,
            deadline,
            cancelled: &cancelled,
        };
        let run = || -> Gap {
            if groups >= per_group {
                (0..groups)
                    .into_par_iter()
                    .map(|g| job.gap(g, job.stats(g, 0..per_group)))
                    .reduce(|| Gap::NONE, Gap::merge)
            } else {
                let chunk = (per_group / 64).max(1);
                (0..groups)
                    .map(|g| {
                        let stats = (0..per_group.div_ceil(chunk))
                            .into_par_iter()
                            .map(|i| job.stats(g, i * chunk..((i + 1) * chunk).min(per_group)))
                            .reduce(|| vec![Stat::EMPTY; size as usize], merge_stats);
                        job.gap(g, stats)
                    })
                    .fold(Gap::NONE, Gap::merge)
            }
        };
        let gap = match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        };
        if cancelled.load(AtomicOrdering::Relaxed) {
            return Err(CountError::Timeout);
        }
        let witness = gap.at.filter(|_| gap.diff > 0).map(|(s1, s2, c)| Witness {
            sigma1: layout.valuation(s1, size),
            sigma2: layout.valuation(s2, size),
            c,
        });
        Ok(Qms {
            num: den - gap.diff,
            den,
            witness,
        })
    }
}

struct GroupJob<'a> {
    prog: &'a Compiled,
    fixed: usize,
    size: u32,
    per_group: u64,
    deadline: Option<Instant>,
    cancelled: &'a AtomicBool,
}

impl GroupJob<'_> {
    /// Per-output-value extremes over secret indices `range` of group `g`.
    fn stats(&self, g: u64, range: std::ops::Range<u64>) -> Vec<Stat> {
        let mut stats = vec![Stat::EMPTY; self.size as usize];
        let mut input = vec![0; self.prog.inputs()];
        let mut regs = self.prog.scratch();
        let mut counts = vec![0u64; self.size as usize];
        for (n, s) in range.enumerate() {
            if n % 64 == 0
                && (self.cancelled.load(AtomicOrdering::Relaxed)
                    || self.deadline.is_some_and(|d| Instant::now() > d))
            {
                self.cancelled.store(true, AtomicOrdering::Relaxed);
                break;
            }
            let idx = g * self.per_group + s;
            decode(idx, u64::from(self.size), &mut input[..self.fixed]);
            self.prog.eval_fixed(&input, &mut regs);
            counts.iter_mut().for_each(|c| *c = 0);
            count_into(self.prog, &mut input, self.fixed, self.size, &mut regs, &mut counts);
            for (st, &c) in stats.iter_mut().zip(&counts) {
                *st = st.merge(Stat {
                    max: c,
                    argmax: idx,
                    min: c,
                    argmin: idx,
                });
            }
        }
        stats
    }

    fn gap(&self, _g: u64, stats: Vec<Stat>) -> Gap {
        stats
            .iter()
            .enumerate()
            .filter(|(_, st)| st.argmax != u64::MAX)
            .map(|(c, st)| Gap {
                diff: st.max - st.min,
                at: Some((st.argmax, st.argmin, c as Value)),
            })
            .fold(Gap::NONE, Gap::merge)
    }
}

/// Adds the count vector over all random assignments; `input[..fixed]` and
/// the fixed registers must already be set.
fn count_into(prog: &Compiled, input: &mut [Value], fixed: usize, size: u32, regs: &mut [Value], counts: &mut [u64]) {
    if !prog.output_varies() {
        let v = prog.eval_varying(input, regs);
        let n = u64::from(size).pow((input.len() - fixed) as u32);
        counts[v as usize] += n;
        return;
    }
    input[fixed..].iter_mut().for_each(|x| *x = 0);
    loop {
        counts[prog.eval_varying(input, regs) as usize] += 1;
        if !advance(&mut input[fixed..], size) {
            break;
        }
    }
}

/// [`Counter::distribution`] with default settings.
pub fn distribution(e: &Expr, sigma: &HashMap<Var, Value>, d: &DomainConfig) -> Result<CountVector, CountError> {
    Counter::new(d).distribution(e, sigma)
}

/// [`Counter::check_uniform`] with default settings.
pub fn check_uniform(e: &Expr, d: &DomainConfig) -> Result<bool, CountError> {
    Counter::new(d).check_uniform(e)
}

/// [`Counter::check_si`] with default settings.
pub fn check_si(e: &Expr, d: &DomainConfig) -> Result<(bool, Option<(Valuation, Valuation)>), CountError> {
    Counter::new(d).check_si(e)
}

/// [`Counter::qms_exact`] with default settings.
pub fn qms_exact(e: &Expr, d: &DomainConfig) -> Result<Qms, CountError> {
    Counter::new(d).qms_exact(e)
}
