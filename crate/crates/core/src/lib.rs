//! Verification and quantification of masking countermeasures for
//! straight-line programs over `n`-bit words.
//!
//! Pipeline: parse a program ([`program`]), infer distribution types
//! ([`types`]), simplify what the rules cannot decide ([`reduce`]), and fall
//! back to exact model counting ([`counting`]) or an SMT solver ([`smt`]).
//! [`verifier`] orchestrates the steps and [`cli`] exposes them.

pub mod cli;
pub mod counting;
pub mod domain;
pub mod expr;
pub mod program;
pub mod reduce;
pub mod smt;
pub mod types;
pub mod verifier;

pub use counting::{qms_exact, CountError, CountVector, Counter, Qms, Valuation, Witness};
pub use domain::{gf_mul, make_domain, DomainConfig, DomainError, Op, Value};
pub use expr::{Expr, ExprKind, Interner, Var, VarClass};
pub use program::{parse_expr, ParseError, Program};
pub use reduce::{simplify, MetaTheorem, Oracle, OracleRegistry, Simplifier};
pub use smt::{encode_psi, qms_smt, SmtError, SmtProfile, SolverConfig};
pub use types::{infer, DistType, Judgement, Rule, TypeChecker};
pub use verifier::{pm_check, qms_compute, EngineConfig, EngineKind, Method, Report, VariableVerdict};
