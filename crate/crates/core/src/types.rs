//! Distribution-type inference.
//!
//! Types are inferred bottom-up over the expression DAG. Each node gets the
//! first applicable rule in the order Dom, NoKey, Key, Ide3, Ide1, Ide2, Ide4,
//! Sid1, Sid2, Sdd, falling back to a propagation-store lookup and finally
//! Ukd. Binary rules with an asymmetric premise (Sid1, Sdd) are also tried
//! with the operands swapped, which is recorded as a trailing `Com`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Op;
use crate::expr::{Expr, ExprKind, Var, VarClass};

/// Distribution type of an expression.
///
/// `Rud`: uniform for every valuation. `Sid`: same distribution for all
/// valuations agreeing on public inputs. `Sdd`: not `Sid`. `Ukd`: unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DistType {
    Rud,
    Sid,
    Sdd,
    Ukd,
}

impl DistType {
    /// Subtyping: `Rud <= Sid`, every type is below itself.
    pub fn is_subtype_of(self, other: DistType) -> bool {
        self == other || (self == DistType::Rud && other == DistType::Sid)
    }

    /// Perfectly masked (`Rud` or `Sid`).
    pub fn is_masked(self) -> bool {
        self.is_subtype_of(DistType::Sid)
    }
}

impl fmt::Display for DistType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistType::Rud => "RUD",
            DistType::Sid => "SID",
            DistType::Sdd => "SDD",
            DistType::Ukd => "UKD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    Dom,
    Com,
    Ide1,
    Ide2,
    Ide3,
    Ide4,
    NoKey,
    Key,
    Sid1,
    Sid2,
    Sdd,
    Ukd,
    /// Type taken from the propagation store.
    Store,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgement {
    pub expr: Expr,
    pub ty: DistType,
    /// Rules of the derivation in post-order; the last one concludes `ty`.
    pub rule_trace: Vec<Rule>,
}

/// Types already resolved by other means (reduction, oracle, counting).
pub type TypeStore = HashMap<Expr, DistType>;

#[derive(Debug, Clone)]
struct Sets {
    rvars: Arc<BTreeSet<Var>>,
    dom: Arc<BTreeSet<Var>>,
    has_secret: bool,
}

#[derive(Debug, Clone)]
struct Derivation {
    ty: DistType,
    rule: Rule,
    swapped: bool,
    premises: Vec<Expr>,
}

/// Memoizing type checker with a propagation store.
#[derive(Default)]
pub struct TypeChecker {
    sets: HashMap<Expr, Sets>,
    derivations: HashMap<Expr, Derivation>,
    store: TypeStore,
}

fn is_sid1_op(op: Op) -> bool {
    matches!(op, Op::And | Op::Or | Op::GfMul | Op::Mul)
}

impl TypeChecker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self) -> &TypeStore {
        &self.store
    }

    /// Records a resolved type. Cached `Ukd` results are dropped since they
    /// may now resolve.
    pub fn record(&mut self, e: &Expr, ty: DistType) {
        if ty == DistType::Ukd {
            return;
        }
        self.store.insert(e.clone(), ty);
        self.derivations.retain(|_, d| d.ty != DistType::Ukd);
    }

    pub(crate) fn compute_sets(&mut self, e: &Expr) {
        for node in e.postorder() {
            if self.sets.contains_key(&node) {
                continue;
            }
            let sets = match node.kind() {
                ExprKind::Const(_) => Sets {
                    rvars: Arc::default(),
                    dom: Arc::default(),
                    has_secret: false,
                },
                ExprKind::Var(v) => {
                    let one = Arc::new(BTreeSet::from([v.clone()]));
                    Sets {
                        rvars: if v.is_random() { one.clone() } else { Arc::default() },
                        dom: if v.is_random() { one } else { Arc::default() },
                        has_secret: v.class() == VarClass::Secret,
                    }
                }
                ExprKind::Not(a) => self.sets[a].clone(),
                ExprKind::Binary(op, a, b) => {
                    let (sa, sb) = (&self.sets[a], &self.sets[b]);
                    let rvars = if sb.rvars.is_empty() {
                        sa.rvars.clone()
                    } else if sa.rvars.is_empty() {
                        sb.rvars.clone()
                    } else {
                        Arc::new(sa.rvars.union(&sb.rvars).cloned().collect())
                    };
                    let dom = match op {
                        Op::Xor | Op::Add | Op::Sub => {
                            let left = sa.dom.iter().filter(|r| !sb.rvars.contains(*r));
                            let right = sb.dom.iter().filter(|r| !sa.rvars.contains(*r));
                            Arc::new(left.chain(right).cloned().collect())
                        }
                        Op::Mul | Op::GfMul => {
                            let invertible = |c: Option<u32>| match (op, c) {
                                (Op::Mul, Some(c)) => c & 1 == 1,
                                (_, Some(c)) => c != 0,
                                _ => false,
                            };
                            if invertible(b.as_const()) {
                                sa.dom.clone()
                            } else if invertible(a.as_const()) {
                                sb.dom.clone()
                            } else {
                                Arc::default()
                            }
                        }
                        _ => Arc::default(),
                    };
                    Sets {
                        rvars,
                        dom,
                        has_secret: sa.has_secret || sb.has_secret,
                    }
                }
            };
            self.sets.insert(node, sets);
        }
    }

    /// Dominant random variables: occurring once, with only invertible
    /// operators on the path to the root.
    pub fn dominant_vars(&mut self, e: &Expr) -> BTreeSet<Var> {
        self.compute_sets(e);
        (*self.sets[e].dom).clone()
    }

    /// `Dom(e)` for a node already covered by `compute_sets`.
    pub(crate) fn dom_of(&self, e: &Expr) -> &BTreeSet<Var> {
        &self.sets[e].dom
    }

    fn ty(&self, e: &Expr) -> DistType {
        self.derivations[e].ty
    }

    fn derive(&self, e: &Expr) -> Derivation {
        let sets = &self.sets[e];
        let leaf = |rule, ty| Derivation {
            ty,
            rule,
            swapped: false,
            premises: Vec::new(),
        };
        if !sets.dom.is_empty() {
            return leaf(Rule::Dom, DistType::Rud);
        }
        if !sets.has_secret {
            return leaf(Rule::NoKey, DistType::Sid);
        }
        if e.as_var().is_some_and(|v| v.class() == VarClass::Secret) {
            return leaf(Rule::Key, DistType::Sdd);
        }
        let found = match e.kind() {
            ExprKind::Not(a) => {
                let t = self.ty(a);
                (t != DistType::Ukd).then(|| Derivation {
                    ty: t,
                    rule: Rule::Ide1,
                    swapped: false,
                    premises: vec![a.clone()],
                })
            }
            ExprKind::Binary(op, a, b) => self.derive_binary(*op, a, b),
            _ => None,
        };
        if let Some(d) = found {
            return d;
        }
        match self.store.get(e) {
            Some(&t) => leaf(Rule::Store, t),
            None => leaf(Rule::Ukd, DistType::Ukd),
        }
    }

    fn derive_binary(&self, op: Op, a: &Expr, b: &Expr) -> Option<Derivation> {
        let (ta, tb) = (self.ty(a), self.ty(b));
        let rule = |rule, ty, swapped, premises: &[&Expr]| Derivation {
            ty,
            rule,
            swapped,
            premises: premises.iter().map(|&p| p.clone()).collect(),
        };
        if a == b {
            if matches!(op, Op::Xor | Op::Sub) {
                return Some(rule(Rule::Ide3, DistType::Sid, false, &[]));
            }
            if ta.is_masked() {
                return Some(rule(Rule::Ide2, DistType::Sid, false, &[a]));
            }
            if matches!(op, Op::And | Op::Or) && ta == DistType::Sdd {
                return Some(rule(Rule::Ide4, DistType::Sdd, false, &[a]));
            }
        }
        let (sa, sb) = (&self.sets[a], &self.sets[b]);
        let escapes = |dom: &BTreeSet<Var>, other: &BTreeSet<Var>| dom.iter().any(|r| !other.contains(r));
        if is_sid1_op(op) && ta == DistType::Rud && tb == DistType::Rud {
            if escapes(&sa.dom, &sb.rvars) {
                return Some(rule(Rule::Sid1, DistType::Sid, false, &[a, b]));
            }
            if escapes(&sb.dom, &sa.rvars) {
                return Some(rule(Rule::Sid1, DistType::Sid, true, &[a, b]));
            }
        }
        if ta.is_masked() && tb.is_masked() && sa.rvars.is_disjoint(&sb.rvars) {
            return Some(rule(Rule::Sid2, DistType::Sid, false, &[a, b]));
        }
        if is_sid1_op(op) {
            if ta == DistType::Sdd && tb == DistType::Rud && escapes(&sb.dom, &sa.rvars) {
                return Some(rule(Rule::Sdd, DistType::Sdd, false, &[a, b]));
            }
            if tb == DistType::Sdd && ta == DistType::Rud && escapes(&sa.dom, &sb.rvars) {
                return Some(rule(Rule::Sdd, DistType::Sdd, true, &[a, b]));
            }
        }
        None
    }

    pub fn infer(&mut self, e: &Expr) -> Judgement {
        self.compute_sets(e);
        for node in e.postorder() {
            if !self.derivations.contains_key(&node) {
                let d = self.derive(&node);
                self.derivations.insert(node, d);
            }
        }
        Judgement {
            expr: e.clone(),
            ty: self.ty(e),
            rule_trace: self.trace(e),
        }
    }

    fn trace(&self, root: &Expr) -> Vec<Rule> {
        let mut out = Vec::new();
        let mut seen: HashSet<Expr> = HashSet::new();
        let mut stack = vec![(root.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            let d = &self.derivations[&e];
            if expanded {
                out.push(d.rule);
                if d.swapped {
                    out.push(Rule::Com);
                }
                continue;
            }
            if !seen.insert(e.clone()) {
                continue;
            }
            stack.push((e.clone(), true));
            for p in d.premises.iter().rev() {
                if !seen.contains(p) {
                    stack.push((p.clone(), false));
                }
            }
        }
        out
    }
}

/// `Dom(e)` with a throwaway checker.
pub fn dominant_vars(e: &Expr) -> BTreeSet<Var> {
    TypeChecker::new().dominant_vars(e)
}

/// Infers a type for `e` with an empty propagation store.
pub fn infer(e: &Expr) -> Judgement {
    TypeChecker::new().infer(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{parse_expr, Program};

    const CUBE: &str = include_str!("../corpus/cube.mv");

    fn ex(text: &str) -> Expr {
        parse_expr(text, |n| {
            Some(match n.chars().next().unwrap() {
                'p' => VarClass::Public,
                'r' => VarClass::Random,
                _ => VarClass::Secret,
            })
        })
        .unwrap()
    }

    fn names(s: &BTreeSet<Var>) -> Vec<&str> {
        s.iter().map(Var::name).collect()
    }

    #[test]
    fn dominant_variable_examples() {
        assert_eq!(names(&dominant_vars(&ex("k ^ r0"))), ["r0"]);
        assert!(dominant_vars(&ex("((r ^ y) ^ r) ^ r")).is_empty());
        assert!(dominant_vars(&ex("r0 @ r0")).is_empty());
        assert_eq!(names(&dominant_vars(&ex("~(k - r0) + k"))), ["r0"]);
        assert_eq!(names(&dominant_vars(&ex("(r0 ^ k) @ 3"))), ["r0"]);
        assert!(dominant_vars(&ex("(r0 ^ k) @ 0")).is_empty());
        assert_eq!(names(&dominant_vars(&ex("(r0 ^ k) * 3"))), ["r0"]);
        // even constants are not invertible mod 2^n
        assert!(dominant_vars(&ex("(r0 ^ k) * 2")).is_empty());
        assert!(dominant_vars(&ex("(r0 ^ k) & 3")).is_empty());
        assert!(dominant_vars(&ex("(r0 ^ k) << 1")).is_empty());
        assert_eq!(names(&dominant_vars(&ex("(r0 ^ r1) ^ r1"))), ["r0"]);
    }

    #[test]
    fn cube_judgements() {
        let p = Program::parse(CUBE).unwrap();
        let mut tc = TypeChecker::new();
        let got: Vec<(String, DistType)> = p
            .internals()
            .map(|x| (x.to_string(), tc.infer(p.expr_of(x).unwrap()).ty))
            .collect();
        use DistType::*;
        let want = [
            ("x", Rud),
            ("x0", Sid),
            ("x1", Sid),
            ("x2", Ukd),
            ("x3", Ukd),
            ("x4", Rud),
            ("x5", Rud),
            ("x6", Ukd),
            ("x7", Rud),
            ("x8", Sid),
            ("x9", Rud),
        ];
        let want: Vec<(String, DistType)> = want.iter().map(|(n, t)| (n.to_string(), *t)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn rule_traces() {
        assert_eq!(infer(&ex("k")).rule_trace, [Rule::Key]);
        assert_eq!(infer(&ex("k")).ty, DistType::Sdd);
        assert_eq!(infer(&ex("r0 @ r0")).rule_trace, [Rule::NoKey]);
        let j = infer(&ex("(k ^ r0) @ (k ^ r0)"));
        assert_eq!((j.ty, j.rule_trace), (DistType::Sid, vec![Rule::Dom, Rule::Ide2]));
        let j = infer(&ex("(k ^ r0) ^ (k ^ r0)"));
        assert_eq!((j.ty, j.rule_trace), (DistType::Sid, vec![Rule::Ide3]));
        let j = infer(&ex("~k"));
        assert_eq!((j.ty, j.rule_trace), (DistType::Sdd, vec![Rule::Key, Rule::Ide1]));
        let j = infer(&ex("k & k"));
        assert_eq!((j.ty, j.rule_trace), (DistType::Sdd, vec![Rule::Key, Rule::Ide4]));
        let j = infer(&ex("(k ^ r0) @ (k ^ r1)"));
        assert_eq!(
            (j.ty, j.rule_trace),
            (DistType::Sid, vec![Rule::Dom, Rule::Dom, Rule::Sid1])
        );
        let j = infer(&ex("(k ^ r0) @ ((k ^ r1) @ (k ^ r2))"));
        assert_eq!(j.ty, DistType::Sid);
        let j = infer(&ex("k @ (k ^ r0)"));
        assert_eq!(
            (j.ty, j.rule_trace),
            (DistType::Sdd, vec![Rule::Key, Rule::Dom, Rule::Sdd])
        );
        let j = infer(&ex("(k ^ r0) & k"));
        assert_eq!(
            (j.ty, j.rule_trace),
            (DistType::Sdd, vec![Rule::Dom, Rule::Key, Rule::Sdd, Rule::Com])
        );
        let j = infer(&ex("((k ^ r0) @ (k ^ r0)) << 1"));
        assert_eq!(j.ty, DistType::Sid);
        assert_eq!(j.rule_trace.last(), Some(&Rule::Sid2));
        let j = infer(&ex("k << 1"));
        assert_eq!((j.ty, j.rule_trace), (DistType::Ukd, vec![Rule::Ukd]));
    }

    #[test]
    fn com_for_sid1() {
        // r0 @ r0 is only SID, so this falls through to Sid2
        let j = infer(&ex("(r0 @ r0) @ (k ^ r1)"));
        assert_eq!(j.rule_trace.last(), Some(&Rule::Sid2));
        // only the right operand has a dominant variable the left lacks
        let j = infer(&ex("(k ^ r1) @ (k ^ r0 ^ r1)"));
        assert_eq!(j.ty, DistType::Sid);
        assert_eq!(j.rule_trace[j.rule_trace.len() - 2..], [Rule::Sid1, Rule::Com][..]);
    }

    #[test]
    fn store_resolves_ukd() {
        let p = Program::parse(CUBE).unwrap();
        let mut tc = TypeChecker::new();
        let x2 = p.expr_of("x2").unwrap();
        assert_eq!(tc.infer(x2).ty, DistType::Ukd);
        tc.record(x2, DistType::Sdd);
        let j = tc.infer(x2);
        assert_eq!((j.ty, j.rule_trace), (DistType::Sdd, vec![Rule::Store]));
    }

    #[test]
    fn subtyping() {
        use DistType::*;
        assert!(Rud.is_subtype_of(Sid));
        assert!(!Sid.is_subtype_of(Rud));
        assert!(!Sdd.is_subtype_of(Sid) && !Ukd.is_subtype_of(Sid));
        assert!(!Rud.is_subtype_of(Sdd));
    }

    #[test]
    fn deterministic() {
        let e1 = ex("((k ^ r0) @ (k ^ r0)) @ ((r1 ^ k) & (p | r0))");
        let e2 = ex("((k ^ r0) @ (k ^ r0)) @ ((r1 ^ k) & (p | r0))");
        assert_eq!(infer(&e1).ty, infer(&e2).ty);
        assert_eq!(infer(&e1).rule_trace, infer(&e2).rule_trace);
    }
}
