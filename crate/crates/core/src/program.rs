//! Masked straight-line programs.
//!
//! Surface syntax:
//!
//! ```text
//! fn Cube(k: secret, r0: random, r1: random) {
//!   x = k ^ r0;
//!   x0 = x @ x;
//!   ...
//!   return x7, x9;
//! }
//! ```
//!
//! Operators, loosest to tightest binding: `<< >>`, then `& |`, then `^`,
//! then `+ -`, then `* @`; all left-associative. `~` is unary complement.
//! Constants are decimal or `0x` hex. `//` and `#` start line comments.
//! Right-hand sides with more than one operator are split into fresh
//! single-operator temporaries named `_t0`, `_t1`, ...

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::domain::{DomainConfig, DomainError, Op, Value};
use crate::expr::{Expr, Interner, Var, VarClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("variable `{0}` assigned more than once")]
    NotSsa(String),
    #[error("variable `{0}` used before definition")]
    UseBeforeDef(String),
    #[error("unknown class `{class}` for `{name}` (expected public, secret or random)")]
    UnknownClass { name: String, class: String },
    #[error("{line}:{col}: shift amount must be a constant")]
    NonConstShift { line: usize, col: usize },
    #[error("`{0}` is not an internal variable")]
    UnknownVariable(String),
}

/// A statement operand: a constant or a variable name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Const(Value),
    Var(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Const(c) => write!(f, "{c}"),
            Operand::Var(v) => f.write_str(v),
        }
    }
}

/// Right-hand side of a normalized statement: at most one operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rhs {
    Atom(Operand),
    Not(Operand),
    Binary(Op, Operand, Operand),
}

impl fmt::Display for Rhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhs::Atom(a) => write!(f, "{a}"),
            Rhs::Not(a) => write!(f, "~{a}"),
            Rhs::Binary(op, a, b) => write!(f, "{a} {op} {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub target: String,
    pub rhs: Rhs,
}

/// A validated program in SSA form with its expanded computations.
#[derive(Debug, Clone)]
pub struct Program {
    name: String,
    inputs: Vec<(String, VarClass)>,
    statements: Vec<Statement>,
    returns: Vec<String>,
    exprs: HashMap<String, Expr>,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.inputs == other.inputs
            && self.statements == other.statements
            && self.returns == other.returns
    }
}

impl Program {
    pub fn parse(text: &str) -> Result<Program, ParseError> {
        let raw = Parser::new(text)?.program()?;
        raw.lower()
    }

    /// Validates SSA form and expands every internal variable.
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<(String, VarClass)>,
        statements: Vec<Statement>,
        returns: Vec<String>,
    ) -> Result<Program, ParseError> {
        let mut interner = Interner::new();
        let mut exprs: HashMap<String, Expr> = HashMap::new();
        let mut input_exprs: HashMap<&str, Expr> = HashMap::new();
        for (n, class) in &inputs {
            let e = interner.var(Var::new(n.as_str(), *class));
            if input_exprs.insert(n, e).is_some() {
                return Err(ParseError::NotSsa(n.clone()));
            }
        }
        let lookup = |exprs: &HashMap<String, Expr>, interner: &mut Interner, o: &Operand| match o {
            Operand::Const(c) => Ok(interner.constant(*c)),
            Operand::Var(v) => input_exprs
                .get(v.as_str())
                .or_else(|| exprs.get(v))
                .cloned()
                .ok_or_else(|| ParseError::UseBeforeDef(v.clone())),
        };
        for s in &statements {
            if input_exprs.contains_key(s.target.as_str()) || exprs.contains_key(&s.target) {
                return Err(ParseError::NotSsa(s.target.clone()));
            }
            let e = match &s.rhs {
                Rhs::Atom(a) => lookup(&exprs, &mut interner, a)?,
                Rhs::Not(a) => {
                    let a = lookup(&exprs, &mut interner, a)?;
                    interner.not(a)
                }
                Rhs::Binary(op, a, b) => {
                    if op.is_shift() && !matches!(b, Operand::Const(_)) {
                        return Err(ParseError::NonConstShift { line: 0, col: 0 });
                    }
                    let a = lookup(&exprs, &mut interner, a)?;
                    let b = lookup(&exprs, &mut interner, b)?;
                    interner.binary(*op, a, b)
                }
            };
            exprs.insert(s.target.clone(), e);
        }
        for r in &returns {
            if !input_exprs.contains_key(r.as_str()) && !exprs.contains_key(r) {
                return Err(ParseError::UseBeforeDef(r.clone()));
            }
        }
        Ok(Program {
            name: name.into(),
            inputs,
            statements,
            returns,
            exprs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[(String, VarClass)] {
        &self.inputs
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn returns(&self) -> &[String] {
        &self.returns
    }

    /// Input variables of one class, in declaration order.
    pub fn inputs_of(&self, class: VarClass) -> Vec<Var> {
        self.inputs
            .iter()
            .filter(|(_, c)| *c == class)
            .map(|(n, c)| Var::new(n.as_str(), *c))
            .collect()
    }

    /// `X_i`: assigned variables in statement order.
    pub fn internals(&self) -> impl Iterator<Item = &str> {
        self.statements.iter().map(|s| s.target.as_str())
    }

    /// `Expr(x)`: the computation of an internal variable over the inputs.
    pub fn expr_of(&self, x: &str) -> Result<&Expr, ParseError> {
        self.exprs
            .get(x)
            .ok_or_else(|| ParseError::UnknownVariable(x.to_string()))
    }

    /// Checks constants and shift amounts against a domain.
    pub fn validate_domain(&self, d: &DomainConfig) -> Result<(), DomainError> {
        let check = |o: &Operand| match o {
            Operand::Const(c) if !d.contains(*c) => Err(DomainError::ConstOutOfRange {
                value: *c,
                bits: d.bits(),
            }),
            _ => Ok(()),
        };
        for s in &self.statements {
            match &s.rhs {
                Rhs::Atom(a) | Rhs::Not(a) => check(a)?,
                Rhs::Binary(op, a, b) => {
                    check(a)?;
                    check(b)?;
                    if let (true, Operand::Const(amount)) = (op.is_shift(), b) {
                        if *amount >= d.bits() {
                            return Err(DomainError::ShiftOutOfRange {
                                amount: *amount,
                                bits: d.bits(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs the statements in order under a total input assignment and
    /// returns the value of every internal variable.
    pub fn execute(
        &self,
        inputs: &HashMap<String, Value>,
        d: &DomainConfig,
    ) -> Result<HashMap<String, Value>, DomainError> {
        let mut env: HashMap<String, Value> = HashMap::new();
        let get = |env: &HashMap<String, Value>, o: &Operand| match o {
            Operand::Const(c) => *c,
            Operand::Var(v) => *inputs
                .get(v)
                .or_else(|| env.get(v))
                .unwrap_or_else(|| panic!("no value for `{v}`")),
        };
        for s in &self.statements {
            let v = match &s.rhs {
                Rhs::Atom(a) => get(&env, a),
                Rhs::Not(a) => d.not(get(&env, a)),
                Rhs::Binary(op, a, b) => d.eval_op(*op, get(&env, a), get(&env, b))?,
            };
            env.insert(s.target.clone(), v);
        }
        Ok(env)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fn {}(", self.name)?;
        for (i, (n, c)) in self.inputs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}: {}", c.keyword())?;
        }
        f.write_str(") {\n")?;
        for s in &self.statements {
            writeln!(f, "  {} = {};", s.target, s.rhs)?;
        }
        writeln!(f, "  return {};", self.returns.join(", "))?;
        f.write_str("}\n")
    }
}

/// Parses a standalone expression; `class_of` resolves identifiers.
pub fn parse_expr(text: &str, class_of: impl Fn(&str) -> Option<VarClass>) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let ast = p.expr()?;
    p.expect_eof()?;
    let mut interner = Interner::new();
    ast.to_expr(&mut interner, &|name, _| {
        class_of(name)
            .map(|c| Var::new(name, c))
            .ok_or_else(|| ParseError::UseBeforeDef(name.to_string()))
    })
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Meta(String),
    Num(Value),
    Op(Op),
    Tilde,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Colon,
    Semi,
    Comma,
    Assign,
    Arrow,
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Pos {
    pub line: usize,
    pub col: usize,
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, message: String| ParseError::Syntax { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            if let Some(meta) = word.strip_prefix('$') {
                if meta.is_empty() {
                    return Err(err(pos.line, pos.col, "expected identifier after `$`".into()));
                }
                toks.push((Tok::Meta(meta.to_string()), pos));
            } else {
                toks.push((Tok::Ident(word), pos));
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            let parsed = match word.strip_prefix("0x").or_else(|| word.strip_prefix("0X")) {
                Some(hex) => Value::from_str_radix(hex, 16),
                None => word.parse::<Value>(),
            };
            let v = parsed.map_err(|_| err(pos.line, pos.col, format!("invalid constant `{word}`")))?;
            toks.push((Tok::Num(v), pos));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, len) = match two.as_str() {
            "<<" => (Tok::Op(Op::Shl), 2),
            ">>" => (Tok::Op(Op::Shr), 2),
            "=>" => (Tok::Arrow, 2),
            _ => match c {
                '^' => (Tok::Op(Op::Xor), 1),
                '&' => (Tok::Op(Op::And), 1),
                '|' => (Tok::Op(Op::Or), 1),
                '@' => (Tok::Op(Op::GfMul), 1),
                '+' => (Tok::Op(Op::Add), 1),
                '-' => (Tok::Op(Op::Sub), 1),
                '*' => (Tok::Op(Op::Mul), 1),
                '~' => (Tok::Tilde, 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                '{' => (Tok::LBrace, 1),
                '}' => (Tok::RBrace, 1),
                ':' => (Tok::Colon, 1),
                ';' => (Tok::Semi, 1),
                ',' => (Tok::Comma, 1),
                '=' => (Tok::Assign, 1),
                _ => return Err(err(line, col, format!("unexpected character `{c}`"))),
            },
        };
        toks.push((tok, pos));
        advance(len, &mut i, &mut col);
    }
    toks.push((Tok::Eof, Pos { line, col }));
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone)]
pub(crate) enum Ast {
    Num(Value),
    Ident(String),
    Meta(String, Pos),
    Not(Box<Ast>),
    Bin(Op, Box<Ast>, Box<Ast>),
}

fn precedence(op: Op) -> u8 {
    match op {
        Op::Shl | Op::Shr => 1,
        Op::And | Op::Or => 2,
        Op::Xor => 3,
        Op::Add | Op::Sub => 4,
        Op::Mul | Op::GfMul => 5,
    }
}

impl Ast {
    fn is_atom(&self) -> bool {
        matches!(self, Ast::Num(_) | Ast::Ident(..) | Ast::Meta(..))
    }

    pub(crate) fn to_expr(
        &self,
        interner: &mut Interner,
        resolve: &dyn Fn(&str, bool) -> Result<Var, ParseError>,
    ) -> Result<Expr, ParseError> {
        Ok(match self {
            Ast::Num(v) => interner.constant(*v),
            Ast::Ident(n) => {
                let v = resolve(n, false)?;
                interner.var(v)
            }
            Ast::Meta(n, _) => {
                let v = resolve(n, true)?;
                interner.var(v)
            }
            Ast::Not(a) => {
                let a = a.to_expr(interner, resolve)?;
                interner.not(a)
            }
            Ast::Bin(op, a, b) => {
                let a = a.to_expr(interner, resolve)?;
                let b = b.to_expr(interner, resolve)?;
                interner.binary(*op, a, b)
            }
        })
    }
}

pub(crate) struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

struct RawProgram {
    name: String,
    inputs: Vec<(String, VarClass)>,
    stmts: Vec<(String, Ast)>,
    returns: Vec<String>,
}

impl Parser {
    pub(crate) fn new(text: &str) -> Result<Parser, ParseError> {
        Ok(Parser {
            toks: lex(text)?,
            at: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let p = self.pos();
        Err(ParseError::Syntax {
            line: p.line,
            col: p.col,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    pub(crate) fn expect_eof(&mut self) -> Result<(), ParseError> {
        self.expect(Tok::Eof, "end of input")
    }

    pub(crate) fn skip_arrow(&mut self) -> Result<(), ParseError> {
        self.expect(Tok::Arrow, "`=>`")
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected {what}, found {other:?}")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            other => self.error(format!("expected `{kw}`, found {other:?}")),
        }
    }

    fn program(&mut self) -> Result<RawProgram, ParseError> {
        self.keyword("fn")?;
        let name = self.ident("program name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut inputs = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let var = self.ident("parameter name")?;
                self.expect(Tok::Colon, "`:`")?;
                let class = self.ident("variable class")?;
                let class = VarClass::from_keyword(&class).ok_or(ParseError::UnknownClass {
                    name: var.clone(),
                    class,
                })?;
                inputs.push((var, class));
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        loop {
            match self.peek() {
                Tok::Ident(s) if s == "return" => break,
                Tok::Ident(_) => {
                    let target = self.ident("assignment target")?;
                    self.expect(Tok::Assign, "`=`")?;
                    let rhs = self.expr()?;
                    self.expect(Tok::Semi, "`;`")?;
                    stmts.push((target, rhs));
                }
                other => return self.error(format!("expected statement or `return`, found {other:?}")),
            }
        }
        self.keyword("return")?;
        let parens = *self.peek() == Tok::LParen;
        if parens {
            self.bump();
        }
        let mut returns = vec![self.ident("returned variable")?];
        while *self.peek() == Tok::Comma {
            self.bump();
            returns.push(self.ident("returned variable")?);
        }
        if parens {
            self.expect(Tok::RParen, "`)`")?;
        }
        self.expect(Tok::Semi, "`;`")?;
        self.expect(Tok::RBrace, "`}`")?;
        self.expect_eof()?;
        Ok(RawProgram {
            name,
            inputs,
            stmts,
            returns,
        })
    }

    pub(crate) fn expr(&mut self) -> Result<Ast, ParseError> {
        self.climb(1)
    }

    fn climb(&mut self, min_prec: u8) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op(op) if precedence(*op) >= min_prec => *op,
                _ => return Ok(lhs),
            };
            let op_pos = self.pos();
            self.bump();
            let rhs = self.climb(precedence(op) + 1)?;
            if op.is_shift() && !matches!(rhs, Ast::Num(_)) {
                return Err(ParseError::NonConstShift {
                    line: op_pos.line,
                    col: op_pos.col,
                });
            }
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Tilde => Ok(Ast::Not(Box::new(self.unary()?))),
            Tok::Num(v) => Ok(Ast::Num(v)),
            Tok::Ident(s) => Ok(Ast::Ident(s)),
            Tok::Meta(s) => Ok(Ast::Meta(s, pos)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            other => {
                self.at -= 1;
                self.error(format!("expected expression, found {other:?}"))
            }
        }
    }
}

impl RawProgram {
    fn lower(self) -> Result<Program, ParseError> {
        let mut used: HashSet<String> = self.inputs.iter().map(|(n, _)| n.clone()).collect();
        used.extend(self.stmts.iter().map(|(t, _)| t.clone()));
        for (_, rhs) in &self.stmts {
            collect_idents(rhs, &mut used);
        }
        let mut lowering = Lowering {
            used,
            next: 0,
            out: Vec::new(),
        };
        for (target, rhs) in self.stmts {
            let rhs = lowering.rhs(rhs)?;
            lowering.out.push(Statement { target, rhs });
        }
        Program::new(self.name, self.inputs, lowering.out, self.returns)
    }
}

fn collect_idents(a: &Ast, out: &mut HashSet<String>) {
    match a {
        Ast::Ident(n) => {
            out.insert(n.clone());
        }
        Ast::Not(x) => collect_idents(x, out),
        Ast::Bin(_, x, y) => {
            collect_idents(x, out);
            collect_idents(y, out);
        }
        Ast::Num(_) | Ast::Meta(..) => {}
    }
}

struct Lowering {
    used: HashSet<String>,
    next: usize,
    out: Vec<Statement>,
}

impl Lowering {
    fn fresh(&mut self) -> String {
        loop {
            let name = format!("_t{}", self.next);
            self.next += 1;
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }

    fn operand(&mut self, a: Ast) -> Result<Operand, ParseError> {
        match a {
            Ast::Num(v) => Ok(Operand::Const(v)),
            Ast::Ident(n) => Ok(Operand::Var(n)),
            Ast::Meta(n, p) => Err(ParseError::Syntax {
                line: p.line,
                col: p.col,
                message: format!("metavariable `${n}` outside a pattern"),
            }),
            compound => {
                let rhs = self.rhs(compound)?;
                let target = self.fresh();
                self.out.push(Statement {
                    target: target.clone(),
                    rhs,
                });
                Ok(Operand::Var(target))
            }
        }
    }

    fn rhs(&mut self, a: Ast) -> Result<Rhs, ParseError> {
        Ok(match a {
            atom if atom.is_atom() => Rhs::Atom(self.operand(atom)?),
            Ast::Not(x) => Rhs::Not(self.operand(*x)?),
            Ast::Bin(op, x, y) => {
                let x = self.operand(*x)?;
                let y = self.operand(*y)?;
                Rhs::Binary(op, x, y)
            }
            _ => unreachable!(),
        })
    }
}

/// Sorted names of `vars`.
pub fn names(vars: &BTreeSet<Var>) -> Vec<String> {
    vars.iter().map(|v| v.name().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_domain;

    pub(crate) const CUBE: &str = include_str!("../corpus/cube.mv");

    #[test]
    fn parses_cube() {
        let p = Program::parse(CUBE).unwrap();
        assert_eq!(p.name(), "Cube");
        assert_eq!(p.statements().len(), 11);
        assert_eq!(p.inputs_of(VarClass::Secret), vec![Var::secret("k")]);
        assert_eq!(
            p.inputs_of(VarClass::Random),
            vec![Var::random("r0"), Var::random("r1")]
        );
        assert!(p.inputs_of(VarClass::Public).is_empty());
        let internals: Vec<&str> = p.internals().collect();
        assert_eq!(
            internals,
            ["x", "x0", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9"]
        );
        assert_eq!(p.returns(), ["x7", "x9"]);
    }

    #[test]
    fn expands_cube_computations() {
        let p = Program::parse(CUBE).unwrap();
        assert_eq!(p.expr_of("x").unwrap().to_string(), "k ^ r0");
        assert_eq!(p.expr_of("x2").unwrap().to_string(), "((k ^ r0) @ (k ^ r0)) @ r0");
        assert_eq!(p.expr_of("x3").unwrap().to_string(), "(r0 @ r0) @ (k ^ r0)");
        assert_eq!(
            p.expr_of("x9").unwrap().to_string(),
            "((r0 @ r0) @ r0) ^ ((r1 ^ (((k ^ r0) @ (k ^ r0)) @ r0)) ^ ((r0 @ r0) @ (k ^ r0)))"
        );
        assert!(matches!(p.expr_of("k"), Err(ParseError::UnknownVariable(_))));
    }

    #[test]
    fn constant_assignment_expands_to_constant() {
        let p = Program::parse("fn F(k: secret) { y = 7; z = y; return z; }").unwrap();
        assert_eq!(p.expr_of("z").unwrap().as_const(), Some(7));
    }

    #[test]
    fn ssa_violations() {
        assert_eq!(
            Program::parse("fn F(k: secret) { y = k ^ k; y = k; return y; }").unwrap_err(),
            ParseError::NotSsa("y".into())
        );
        assert_eq!(
            Program::parse("fn F(k: secret) { k = 1; return k; }").unwrap_err(),
            ParseError::NotSsa("k".into())
        );
        assert_eq!(
            Program::parse("fn F(k: secret) { y = z; return y; }").unwrap_err(),
            ParseError::UseBeforeDef("z".into())
        );
        assert_eq!(
            Program::parse("fn F(k: secret) { y = k; return w; }").unwrap_err(),
            ParseError::UseBeforeDef("w".into())
        );
        assert_eq!(
            Program::parse("fn F(k: private) { y = k; return y; }").unwrap_err(),
            ParseError::UnknownClass {
                name: "k".into(),
                class: "private".into()
            }
        );
        assert!(matches!(
            Program::parse("fn F(k: secret, r: random) { y = k << r; return y; }").unwrap_err(),
            ParseError::NonConstShift { line: 1, .. }
        ));
        assert!(matches!(
            Program::parse("fn F(k: secret) {\n  y = k ^ ;\n return y; }").unwrap_err(),
            ParseError::Syntax { line: 2, .. }
        ));
    }

    #[test]
    fn splits_compound_rhs() {
        let p = Program::parse("fn F(k: secret, r: random) { y = (k ^ r) @ ~(k + 1); return y; }").unwrap();
        let text = p.to_string();
        assert_eq!(
            text,
            "fn F(k: secret, r: random) {\n  _t0 = k ^ r;\n  _t1 = k + 1;\n  _t2 = ~_t1;\n  y = _t0 @ _t2;\n  return y;\n}\n"
        );
        assert_eq!(p.expr_of("y").unwrap().to_string(), "(k ^ r) @ ~(k + 1)");
    }

    #[test]
    fn temporaries_avoid_user_names() {
        let p = Program::parse("fn F(k: secret, _t0: random) { y = (k ^ _t0) ^ 1; return y; }").unwrap();
        assert_eq!(p.internals().collect::<Vec<_>>(), ["_t1", "y"]);
    }

    #[test]
    fn precedence_table() {
        let cls = |_: &str| Some(VarClass::Secret);
        let e = parse_expr("a ^ b & c", cls).unwrap();
        assert_eq!(e.to_string(), "(a ^ b) & c");
        let e = parse_expr("a + b * c ^ d", cls).unwrap();
        assert_eq!(e.to_string(), "(a + (b * c)) ^ d");
        let e = parse_expr("a ^ b << 1", cls).unwrap();
        assert_eq!(e.to_string(), "(a ^ b) << 1");
        let e = parse_expr("a - b - c", cls).unwrap();
        assert_eq!(e.to_string(), "(a - b) - c");
        let e = parse_expr("~a @ 0x1f", cls).unwrap();
        assert_eq!(e.to_string(), "~a @ 31");
    }

    #[test]
    fn pretty_print_round_trips() {
        let src = "fn G(p: public, k: secret, r: random) {\n y = ((k ^ r) + p) * 3 >> 2; z = ~y | (r & 5); return (y, z); }";
        let p = Program::parse(src).unwrap();
        let again = Program::parse(&p.to_string()).unwrap();
        assert_eq!(p, again);
        let cube = Program::parse(CUBE).unwrap();
        assert_eq!(Program::parse(&cube.to_string()).unwrap(), cube);
    }

    #[test]
    fn expansion_agrees_with_execution() {
        let src = "fn G(p: public, k: secret, r: random, s: random) {
            a = k ^ r; b = a @ s; c = b - p; d = ~c << 1; e = d * a; f = e >> 1; g = f | (b & r);
            return g; }";
        let prog = Program::parse(src).unwrap();
        // shifting by 1 needs n >= 2
        for bits in 2..=3 {
            let d = make_domain(bits, None).unwrap();
            let size = d.size();
            for idx in 0..size.pow(4) {
                let vals: Vec<Value> = (0..4).map(|i| (idx / size.pow(i)) % size).collect();
                let names = ["p", "k", "r", "s"];
                let inputs: HashMap<String, Value> =
                    names.iter().zip(&vals).map(|(n, v)| (n.to_string(), *v)).collect();
                let env: HashMap<Var, Value> = prog
                    .inputs()
                    .iter()
                    .map(|(n, c)| (Var::new(n.as_str(), *c), inputs[n]))
                    .collect();
                let run = prog.execute(&inputs, &d).unwrap();
                for x in prog.internals() {
                    assert_eq!(prog.expr_of(x).unwrap().eval(&env, &d).unwrap(), run[x], "{x}");
                }
            }
        }
    }
}
