//! Random straight-line programs and expressions for property checks.
#![allow(dead_code)]

use masq::{parse_expr, Expr, Op, Program, VarClass};
use rand::seq::SliceRandom;
use rand::Rng;

/// Source text of a random program with at most `max_secrets` secrets,
/// `max_randoms` randoms and one optional public input.
pub fn random_program_text(rng: &mut impl Rng, bits: u32, max_secrets: usize, max_randoms: usize) -> String {
    let size = 1u32 << bits;
    let mut inputs = Vec::new();
    if rng.gen_bool(0.3) {
        inputs.push(("p0".to_string(), "public"));
    }
    for i in 0..rng.gen_range(1..=max_secrets) {
        inputs.push((format!("k{i}"), "secret"));
    }
    for i in 0..rng.gen_range(0..=max_randoms) {
        inputs.push((format!("r{i}"), "random"));
    }
    let mut pool: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
    let mut body = String::new();
    let stmts = rng.gen_range(1..=8);
    for s in 0..stmts {
        let operand = |rng: &mut dyn rand::RngCore, pool: &[String]| -> String {
            if rng.gen_bool(0.15) {
                rng.gen_range(0..size).to_string()
            } else if pool.len() > inputs.len() && rng.gen_bool(0.5) {
                // favour recent internals so expressions nest
                pool[rng.gen_range(inputs.len()..pool.len())].clone()
            } else {
                pool.choose(rng).unwrap().clone()
            }
        };
        let rhs = match rng.gen_range(0..12) {
            0 => format!("~{}", operand(rng, &pool)),
            1 => operand(rng, &pool),
            _ => {
                let op = *Op::ALL.choose(rng).unwrap();
                let a = operand(rng, &pool);
                let b = if op.is_shift() {
                    rng.gen_range(0..bits).to_string()
                } else {
                    operand(rng, &pool)
                };
                format!("{a} {} {b}", op.symbol())
            }
        };
        let name = format!("x{s}");
        body.push_str(&format!("  {name} = {rhs};\n"));
        pool.push(name);
    }
    let header: Vec<String> = inputs.iter().map(|(n, c)| format!("{n}: {c}")).collect();
    format!("fn R({}) {{\n{body}  return x{};\n}}\n", header.join(", "), stmts - 1)
}

pub fn random_program(rng: &mut impl Rng, bits: u32, max_secrets: usize, max_randoms: usize) -> Program {
    let text = random_program_text(rng, bits, max_secrets, max_randoms);
    Program::parse(&text).unwrap_or_else(|e| panic!("generated program does not parse: {e}\n{text}"))
}

/// A random expression over `k`, optionally `p`, and `randoms` random
/// variables `r0..`, of depth at most `depth`.
pub fn random_expr(rng: &mut impl Rng, bits: u32, randoms: usize, depth: u32) -> Expr {
    let text = random_expr_text(rng, bits, randoms, depth);
    parse_expr(&text, |n| {
        Some(match n.as_bytes()[0] {
            b'p' => VarClass::Public,
            b'k' => VarClass::Secret,
            _ => VarClass::Random,
        })
    })
    .unwrap()
}

fn random_expr_text(rng: &mut impl Rng, bits: u32, randoms: usize, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        let roll = rng.gen_range(0..10);
        return if roll == 0 {
            rng.gen_range(0..1u32 << bits).to_string()
        } else if roll == 1 {
            "p".into()
        } else if roll < 5 || randoms == 0 {
            "k".into()
        } else {
            format!("r{}", rng.gen_range(0..randoms))
        };
    }
    if rng.gen_bool(0.1) {
        return format!("~({})", random_expr_text(rng, bits, randoms, depth - 1));
    }
    let op = *Op::ALL.choose(rng).unwrap();
    let a = random_expr_text(rng, bits, randoms, depth - 1);
    let b = if op.is_shift() {
        rng.gen_range(0..bits).to_string()
    } else {
        random_expr_text(rng, bits, randoms, depth - 1)
    };
    format!("({a}) {} ({b})", op.symbol())
}
