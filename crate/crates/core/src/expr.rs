//! Expressions over input variables.
//!
//! An [`Expr`] is an immutable, reference-counted tree node that caches its
//! structural hash and tree size. Sub-expressions are shared, so the expanded
//! computation of a variable is a DAG even though it denotes a tree. Equality
//! is structural; pointer equality is only a fast path.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainConfig, DomainError, Op, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarClass {
    Public,
    Secret,
    Random,
}

impl VarClass {
    pub fn keyword(self) -> &'static str {
        match self {
            VarClass::Public => "public",
            VarClass::Secret => "secret",
            VarClass::Random => "random",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "public" => Some(VarClass::Public),
            "secret" => Some(VarClass::Secret),
            "random" => Some(VarClass::Random),
            _ => None,
        }
    }
}

/// An input variable. Ordered by class (public, secret, random) then name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    class: VarClass,
    name: Arc<str>,
}

impl Var {
    pub fn new(name: impl Into<Arc<str>>, class: VarClass) -> Self {
        Var {
            class,
            name: name.into(),
        }
    }

    pub fn public(name: &str) -> Self {
        Var::new(name, VarClass::Public)
    }

    pub fn secret(name: &str) -> Self {
        Var::new(name, VarClass::Secret)
    }

    pub fn random(name: &str) -> Self {
        Var::new(name, VarClass::Random)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class(&self) -> VarClass {
        self.class
    }

    pub fn is_random(&self) -> bool {
        self.class == VarClass::Random
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    Const(Value),
    Var(Var),
    Not(Expr),
    Binary(Op, Expr, Expr),
}

#[derive(Debug)]
struct Node {
    kind: ExprKind,
    hash: u64,
    size: u64,
}

#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn make(kind: ExprKind) -> Expr {
        let mut h = DefaultHasher::new();
        let size = match &kind {
            ExprKind::Const(c) => {
                0u8.hash(&mut h);
                c.hash(&mut h);
                1
            }
            ExprKind::Var(v) => {
                1u8.hash(&mut h);
                v.hash(&mut h);
                1
            }
            ExprKind::Not(a) => {
                2u8.hash(&mut h);
                a.0.hash.hash(&mut h);
                a.size().saturating_add(1)
            }
            ExprKind::Binary(op, a, b) => {
                3u8.hash(&mut h);
                op.hash(&mut h);
                a.0.hash.hash(&mut h);
                b.0.hash.hash(&mut h);
                a.size().saturating_add(b.size()).saturating_add(1)
            }
        };
        Expr(Arc::new(Node {
            kind,
            hash: h.finish(),
            size,
        }))
    }

    pub fn constant(c: Value) -> Expr {
        Expr::make(ExprKind::Const(c))
    }

    pub fn var(v: Var) -> Expr {
        Expr::make(ExprKind::Var(v))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Expr) -> Expr {
        Expr::make(ExprKind::Not(a))
    }

    /// # Panics
    /// If `op` is a shift and `b` is not a constant.
    pub fn binary(op: Op, a: Expr, b: Expr) -> Expr {
        assert!(
            !op.is_shift() || b.as_const().is_some(),
            "shift amount must be a constant"
        );
        Expr::make(ExprKind::Binary(op, a, b))
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    /// Number of nodes of the tree this DAG denotes (saturating).
    pub fn size(&self) -> u64 {
        self.0.size
    }

    pub fn as_const(&self) -> Option<Value> {
        match self.kind() {
            ExprKind::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self.kind() {
            ExprKind::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn children(&self) -> impl Iterator<Item = &Expr> {
        let (a, b) = match self.kind() {
            ExprKind::Const(_) | ExprKind::Var(_) => (None, None),
            ExprKind::Not(a) => (Some(a), None),
            ExprKind::Binary(_, a, b) => (Some(a), Some(b)),
        };
        a.into_iter().chain(b)
    }

    /// Distinct nodes (by pointer) in post-order: children before parents,
    /// `self` last. Iterative, so deep expressions do not exhaust the stack.
    pub fn postorder(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                out.push(e);
                continue;
            }
            if !seen.insert(e.id()) {
                continue;
            }
            stack.push((e.clone(), true));
            let kids: Vec<Expr> = e.children().cloned().collect();
            for c in kids.into_iter().rev() {
                if !seen.contains(&c.id()) {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// `Var(e)`: every variable occurring in the expression.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.postorder()
            .iter()
            .filter_map(|e| e.as_var().cloned())
            .collect()
    }

    /// `RVar(e)`: the random variables of the expression.
    pub fn rvars(&self) -> BTreeSet<Var> {
        self.vars().into_iter().filter(Var::is_random).collect()
    }

    pub fn has_class(&self, class: VarClass) -> bool {
        self.postorder()
            .iter()
            .any(|e| e.as_var().is_some_and(|v| v.class() == class))
    }

    /// Number of leaf occurrences of `v` in the tree (saturating).
    pub fn occurrences(&self, v: &Var) -> u64 {
        let mut counts: HashMap<usize, u64> = HashMap::new();
        for e in self.postorder() {
            let c = match e.kind() {
                ExprKind::Var(w) => u64::from(w == v),
                ExprKind::Const(_) => 0,
                _ => e.children().map(|c| counts[&c.id()]).fold(0, u64::saturating_add),
            };
            counts.insert(e.id(), c);
        }
        counts[&self.id()]
    }

    /// Number of occurrences of `sub` as a subtree of the tree (saturating).
    pub fn subterm_occurrences(&self, sub: &Expr) -> u64 {
        let mut counts: HashMap<usize, u64> = HashMap::new();
        for e in self.postorder() {
            let c = if &e == sub {
                1
            } else {
                e.children().map(|c| counts[&c.id()]).fold(0, u64::saturating_add)
            };
            counts.insert(e.id(), c);
        }
        counts[&self.id()]
    }

    /// Rebuilds the expression bottom-up, letting `f` replace any node after
    /// its children have been rebuilt. Shared nodes are visited once.
    pub fn rewrite(&self, interner: &mut Interner, mut f: impl FnMut(&mut Interner, Expr) -> Expr) -> Expr {
        let mut done: HashMap<usize, Expr> = HashMap::new();
        for e in self.postorder() {
            let rebuilt = match e.kind() {
                ExprKind::Const(_) | ExprKind::Var(_) => e.clone(),
                ExprKind::Not(a) => {
                    let na = &done[&a.id()];
                    if na.ptr_eq(a) {
                        e.clone()
                    } else {
                        interner.not(na.clone())
                    }
                }
                ExprKind::Binary(op, a, b) => {
                    let (na, nb) = (&done[&a.id()], &done[&b.id()]);
                    if na.ptr_eq(a) && nb.ptr_eq(b) {
                        e.clone()
                    } else {
                        interner.binary(*op, na.clone(), nb.clone())
                    }
                }
            };
            let out = f(interner, rebuilt);
            done.insert(e.id(), out);
        }
        done.remove(&self.id()).expect("root visited")
    }

    /// Replaces every variable found in `map`.
    pub fn substitute(&self, map: &HashMap<Var, Expr>) -> Expr {
        let mut interner = Interner::seeded(self);
        self.rewrite(&mut interner, |_, e| match e.as_var().and_then(|v| map.get(v)) {
            Some(r) => r.clone(),
            None => e,
        })
    }

    /// Replaces every occurrence of the subtree `target` by `with`.
    pub fn replace_subterm(&self, target: &Expr, with: &Expr) -> Expr {
        let mut interner = Interner::seeded(self);
        self.rewrite(&mut interner, |_, e| if &e == target { with.clone() } else { e })
    }

    /// Checks that constants fit the domain and shift amounts are `< n`.
    pub fn validate(&self, d: &DomainConfig) -> Result<(), DomainError> {
        for e in self.postorder() {
            match e.kind() {
                ExprKind::Const(c) if !d.contains(*c) => {
                    return Err(DomainError::ConstOutOfRange {
                        value: *c,
                        bits: d.bits(),
                    })
                }
                ExprKind::Binary(op, _, b) if op.is_shift() => {
                    let amount = b.as_const().expect("shift amount is constant");
                    if amount >= d.bits() {
                        return Err(DomainError::ShiftOutOfRange {
                            amount,
                            bits: d.bits(),
                        });
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Evaluates under a total assignment of the expression's variables.
    pub fn eval(&self, env: &HashMap<Var, Value>, d: &DomainConfig) -> Result<Value, DomainError> {
        self.validate(d)?;
        let mut vals: HashMap<usize, Value> = HashMap::new();
        for e in self.postorder() {
            let v = match e.kind() {
                ExprKind::Const(c) => *c,
                ExprKind::Var(v) => *env.get(v).unwrap_or_else(|| panic!("unbound variable {v}")),
                ExprKind::Not(a) => d.not(vals[&a.id()]),
                ExprKind::Binary(op, a, b) => d.eval_op(*op, vals[&a.id()], vals[&b.id()])?,
            };
            vals.insert(e.id(), v);
        }
        Ok(vals[&self.id()])
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other) || (self.0.hash == other.0.hash && self.0.size == other.0.size && self.0.kind == other.0.kind)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

/// Infix rendering in the program surface syntax; every compound operand is
/// parenthesized.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e.kind() {
                ExprKind::Binary(..) => write!(f, "({e})"),
                _ => write!(f, "{e}"),
            }
        }
        match self.kind() {
            ExprKind::Const(c) => write!(f, "{c}"),
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Not(a) => {
                f.write_str("~")?;
                operand(a, f)
            }
            ExprKind::Binary(op, a, b) => {
                operand(a, f)?;
                write!(f, " {op} ")?;
                operand(b, f)
            }
        }
    }
}

/// Hash-consing table: structurally equal nodes built through the same
/// interner share one allocation.
#[derive(Default)]
pub struct Interner {
    nodes: HashSet<Expr>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// An interner pre-populated with every node of `e`.
    pub fn seeded(e: &Expr) -> Self {
        let mut i = Interner::new();
        for n in e.postorder() {
            i.nodes.insert(n);
        }
        i
    }

    pub fn intern(&mut self, e: Expr) -> Expr {
        if let Some(existing) = self.nodes.get(&e) {
            return existing.clone();
        }
        self.nodes.insert(e.clone());
        e
    }

    pub fn constant(&mut self, c: Value) -> Expr {
        self.intern(Expr::constant(c))
    }

    pub fn var(&mut self, v: Var) -> Expr {
        self.intern(Expr::var(v))
    }

    pub fn not(&mut self, a: Expr) -> Expr {
        self.intern(Expr::not(a))
    }

    pub fn binary(&mut self, op: Op, a: Expr, b: Expr) -> Expr {
        self.intern(Expr::binary(op, a, b))
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(Value),
    Input(usize),
    Not(usize),
    Binary(Op, usize, usize),
}

/// A straight-line evaluator for one expression with a fixed input order.
///
/// Structurally equal sub-expressions are evaluated once. Instructions that
/// do not depend on the "varying" inputs (the trailing `varying` slots of the
/// input order) are split off so callers can evaluate them once per outer
/// assignment.
#[derive(Debug, Clone)]
pub struct Compiled {
    domain: DomainConfig,
    instrs: Vec<Instr>,
    /// Indices into `instrs` independent of the varying inputs.
    fixed: Vec<usize>,
    /// Indices into `instrs` that depend on the varying inputs.
    varying: Vec<usize>,
    output: usize,
    output_varies: bool,
    inputs: usize,
}

impl Compiled {
    /// `inputs` must cover every variable of `e`; the last `varying` of them
    /// are the inner enumeration variables.
    pub fn new(e: &Expr, inputs: &[Var], varying: usize, d: &DomainConfig) -> Result<Compiled, DomainError> {
        e.validate(d)?;
        let index: HashMap<&Var, usize> = inputs.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let first_varying = inputs.len() - varying;
        let mut slot_of: HashMap<Expr, usize> = HashMap::new();
        let mut instrs = Vec::new();
        let mut depends = Vec::new();
        for node in e.postorder() {
            if slot_of.contains_key(&node) {
                continue;
            }
            let (ins, dep) = match node.kind() {
                ExprKind::Const(c) => (Instr::Const(*c), false),
                ExprKind::Var(v) => {
                    let i = *index
                        .get(v)
                        .unwrap_or_else(|| panic!("variable {v} missing from input order"));
                    (Instr::Input(i), i >= first_varying)
                }
                ExprKind::Not(a) => {
                    let a = slot_of[a];
                    (Instr::Not(a), depends[a])
                }
                ExprKind::Binary(op, a, b) => {
                    let (a, b) = (slot_of[a], slot_of[b]);
                    (Instr::Binary(*op, a, b), depends[a] || depends[b])
                }
            };
            slot_of.insert(node, instrs.len());
            instrs.push(ins);
            depends.push(dep);
        }
        let (varying_idx, fixed_idx): (Vec<usize>, Vec<usize>) = (0..instrs.len()).partition(|&i| depends[i]);
        let output = slot_of[e];
        Ok(Compiled {
            domain: d.clone(),
            output,
            output_varies: depends[output],
            instrs,
            fixed: fixed_idx,
            varying: varying_idx,
            inputs: inputs.len(),
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Scratch buffer sized for this program.
    pub fn scratch(&self) -> Vec<Value> {
        vec![0; self.instrs.len()]
    }

    /// Whether the output depends on the varying inputs at all.
    pub fn output_varies(&self) -> bool {
        self.output_varies
    }

    #[inline]
    fn step(&self, i: usize, input: &[Value], regs: &mut [Value]) {
        regs[i] = match self.instrs[i] {
            Instr::Const(c) => c,
            Instr::Input(k) => input[k],
            Instr::Not(a) => self.domain.not(regs[a]),
            Instr::Binary(op, a, b) => self.domain.apply(op, regs[a], regs[b]),
        };
    }

    /// Evaluates the instructions independent of the varying inputs.
    #[inline]
    pub fn eval_fixed(&self, input: &[Value], regs: &mut [Value]) {
        for &i in &self.fixed {
            self.step(i, input, regs);
        }
    }

    /// Evaluates the remaining instructions and returns the output; requires
    /// a prior [`eval_fixed`](Self::eval_fixed) with the same fixed inputs.
    #[inline]
    pub fn eval_varying(&self, input: &[Value], regs: &mut [Value]) -> Value {
        for &i in &self.varying {
            self.step(i, input, regs);
        }
        regs[self.output]
    }

    pub fn eval(&self, input: &[Value], regs: &mut [Value]) -> Value {
        self.eval_fixed(input, regs);
        self.eval_varying(input, regs)
    }
}
