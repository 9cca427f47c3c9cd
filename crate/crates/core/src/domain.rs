//! The value domain `B = {0, .., 2^n - 1}`.
//!
//! Values are plain `u32`s. Bitwise operators act on the low `n` bits, `+ - *`
//! wrap modulo `2^n`, and `@` multiplies in `GF(2)[x]/(p(x))` for the
//! irreducible polynomial `p` carried by the [`DomainConfig`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An element of the domain. Always `< 2^bits` of the governing config.
pub type Value = u32;

/// Largest supported bit-width.
pub const MAX_BITS: u32 = 16;

/// Widths up to this use a precomputed multiplication table.
const TABLE_BITS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("bit-width {0} outside supported range 1..={MAX_BITS}")]
    BadWidth(u32),
    #[error("polynomial {poly:#x} does not have degree exactly {bits} with a constant term")]
    BadDegree { bits: u32, poly: u32 },
    #[error("polynomial {0:#x} is reducible over GF(2)")]
    Reducible(u32),
    #[error("shift amount {amount} out of range for {bits}-bit values")]
    ShiftOutOfRange { amount: Value, bits: u32 },
    #[error("constant {value} does not fit in {bits} bits")]
    ConstOutOfRange { value: Value, bits: u32 },
}

/// Binary operators of the program language.
///
/// `Shl`/`Shr` only ever take a constant right operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    Xor,
    And,
    Or,
    GfMul,
    Add,
    Sub,
    Mul,
    Shl,
    Shr,
}

impl Op {
    pub const ALL: [Op; 9] = [
        Op::Xor,
        Op::And,
        Op::Or,
        Op::GfMul,
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Shl,
        Op::Shr,
    ];

    /// ASCII surface syntax.
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Xor => "^",
            Op::And => "&",
            Op::Or => "|",
            Op::GfMul => "@",
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Shl => "<<",
            Op::Shr => ">>",
        }
    }

    pub fn is_shift(self) -> bool {
        matches!(self, Op::Shl | Op::Shr)
    }

    /// `a op b == b op a` for all operands.
    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            Op::Xor | Op::And | Op::Or | Op::GfMul | Op::Add | Op::Mul
        )
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Bit-width and field polynomial of the domain.
#[derive(Clone)]
pub struct DomainConfig {
    bits: u32,
    poly: u32,
    table: Option<Arc<[u16]>>,
}

impl PartialEq for DomainConfig {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits && self.poly == other.poly
    }
}

impl Eq for DomainConfig {}

impl fmt::Debug for DomainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainConfig")
            .field("bits", &self.bits)
            .field("poly", &format_args!("{:#x}", self.poly))
            .finish()
    }
}

impl DomainConfig {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn poly(&self) -> u32 {
        self.poly
    }

    /// `2^n`, the number of domain elements.
    pub fn size(&self) -> u32 {
        1 << self.bits
    }

    pub fn mask(&self) -> Value {
        self.size() - 1
    }

    pub fn contains(&self, v: Value) -> bool {
        v <= self.mask()
    }

    pub fn gf_mul(&self, a: Value, b: Value) -> Value {
        match &self.table {
            Some(t) => t[((a as usize) << self.bits) | b as usize] as Value,
            None => gf_mul_slow(a, b, self.bits, self.poly),
        }
    }

    pub fn not(&self, a: Value) -> Value {
        !a & self.mask()
    }

    /// Applies a binary operator. Shift amounts must be `< n`.
    pub fn eval_op(&self, op: Op, a: Value, b: Value) -> Result<Value, DomainError> {
        if op.is_shift() && b >= self.bits {
            return Err(DomainError::ShiftOutOfRange {
                amount: b,
                bits: self.bits,
            });
        }
        Ok(self.apply(op, a, b))
    }

    /// Unchecked variant of [`eval_op`](Self::eval_op) for validated operands.
    #[inline]
    pub(crate) fn apply(&self, op: Op, a: Value, b: Value) -> Value {
        let m = self.mask();
        match op {
            Op::Xor => a ^ b,
            Op::And => a & b,
            Op::Or => a | b,
            Op::GfMul => self.gf_mul(a, b),
            Op::Add => a.wrapping_add(b) & m,
            Op::Sub => a.wrapping_sub(b) & m,
            Op::Mul => a.wrapping_mul(b) & m,
            Op::Shl => (a << b) & m,
            Op::Shr => a >> b,
        }
    }
}

/// Builds a validated domain. Without `poly` the default table is used:
/// `x+1`, `x^2+x+1`, `x^3+x+1`, `x^4+x+1`, `x^8+x^4+x^3+x^2+1`, and the
/// smallest irreducible polynomial for any other width.
pub fn make_domain(bits: u32, poly: Option<u32>) -> Result<DomainConfig, DomainError> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(DomainError::BadWidth(bits));
    }
    let poly = match poly {
        Some(p) => p,
        None => default_poly(bits),
    };
    if poly >> bits != 1 || poly & 1 == 0 {
        return Err(DomainError::BadDegree { bits, poly });
    }
    if !is_irreducible(poly) {
        return Err(DomainError::Reducible(poly));
    }
    let table = (bits <= TABLE_BITS).then(|| {
        let size = 1u32 << bits;
        let mut t = Vec::with_capacity((size * size) as usize);
        for a in 0..size {
            for b in 0..size {
                t.push(gf_mul_slow(a, b, bits, poly) as u16);
            }
        }
        Arc::from(t)
    });
    Ok(DomainConfig { bits, poly, table })
}

/// Carry-less product of `a` and `b` reduced modulo `poly`.
pub fn gf_mul(a: Value, b: Value, d: &DomainConfig) -> Value {
    d.gf_mul(a, b)
}

pub fn eval_op(op: Op, a: Value, b: Value, d: &DomainConfig) -> Result<Value, DomainError> {
    d.eval_op(op, a, b)
}

fn default_poly(bits: u32) -> u32 {
    match bits {
        1 => 0b11,
        2 => 0b111,
        3 => 0b1011,
        4 => 0b1_0011,
        8 => 0x11D,
        _ => ((1u32 << bits) + 1..1u32 << (bits + 1))
            .step_by(2)
            .find(|&p| is_irreducible(p))
            .expect("an irreducible polynomial exists for every degree"),
    }
}

fn gf_mul_slow(mut a: Value, mut b: Value, bits: u32, poly: u32) -> Value {
    let mut acc = 0;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a >> bits & 1 == 1 {
            a ^= poly;
        }
    }
    acc
}

fn degree(p: u32) -> u32 {
    31 - p.leading_zeros()
}

/// Remainder of polynomial division over GF(2).
fn poly_rem(mut a: u32, b: u32) -> u32 {
    let db = degree(b);
    while a != 0 && degree(a) >= db {
        a ^= b << (degree(a) - db);
    }
    a
}

/// Trial division by every polynomial of degree `1..=deg/2`.
pub(crate) fn is_irreducible(p: u32) -> bool {
    if p < 2 {
        return false;
    }
    let d = degree(p);
    (1..=d / 2).all(|k| (1u32 << k..1u32 << (k + 1)).all(|q| poly_rem(p, q) != 0))
}
