//! Guard and assignment expressions.
//!
//! Grammar (lowest precedence first):
//!
//! ```text
//! expr  := sum (("==" | "!=" | "<" | ">") sum)?
//! sum   := atom (("+" | "-") atom)*
//! atom  := INT | STRING | "true" | "false" | IDENT | "(" expr ")"
//! ```
//!
//! Strings are double-quoted with `\"` and `\\` escapes. There are no
//! function calls.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn ty(&self) -> Type {
        match self {
            Value::Int(_) => Type::Int,
            Value::Str(_) => Type::Str,
            Value::Bool(_) => Type::Bool,
        }
    }

    /// Parses a literal as written in a variable declaration.
    pub fn parse_literal(s: &str) -> Option<Value> {
        match parse(s).ok()? {
            Expr::Lit(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Int,
    Str,
    Bool,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Int => "int",
            Type::Str => "string",
            Type::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Add,
    Sub,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Add => "+",
            BinOp::Sub => "-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Value),
    Var(String),
    Binary(Box<Expr>, BinOp, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("malformed expression at {pos}: {message}")]
    Malformed { pos: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Binary(lhs, op, rhs) => {
                let side = |e: &Expr, f: &mut fmt::Formatter<'_>, left: bool| match e {
                    // left-nested sums re-associate the same way, everything else is bracketed
                    Expr::Binary(_, inner, _)
                        if left
                            && matches!(op, BinOp::Add | BinOp::Sub)
                            && matches!(inner, BinOp::Add | BinOp::Sub) =>
                    {
                        write!(f, "{e}")
                    }
                    Expr::Binary(..) => write!(f, "({e})"),
                    _ => write!(f, "{e}"),
                };
                side(lhs, f, true)?;
                write!(f, " {} ", op.symbol())?;
                side(rhs, f, false)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Str(String),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let malformed = |pos, message: &str| ExprError::Malformed {
        pos,
        message: message.to_string(),
    };
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        // a minus starts a negative literal only where an operand is expected
        let operand_expected = matches!(out.last(), None | Some((_, Tok::Op(_))) | Some((_, Tok::LParen)));
        match c {
            b' ' | b'\t' => i += 1,
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b'=' | b'!' => {
                if bytes.get(i + 1) != Some(&b'=') {
                    return Err(malformed(i, "expected `==` or `!=`"));
                }
                out.push((start, Tok::Op(if c == b'=' { BinOp::Eq } else { BinOp::Ne })));
                i += 2;
            }
            b'<' => {
                out.push((start, Tok::Op(BinOp::Lt)));
                i += 1;
            }
            b'>' => {
                out.push((start, Tok::Op(BinOp::Gt)));
                i += 1;
            }
            b'+' => {
                out.push((start, Tok::Op(BinOp::Add)));
                i += 1;
            }
            b'-' if !(operand_expected && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                out.push((start, Tok::Op(BinOp::Sub)));
                i += 1;
            }
            b'-' | b'0'..=b'9' => {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n = src[start..i]
                    .parse()
                    .map_err(|_| malformed(start, "integer literal out of range"))?;
                out.push((start, Tok::Int(n)));
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                let mut closed = false;
                let mut chars = src[i..].char_indices();
                while let Some((off, ch)) = chars.next() {
                    match ch {
                        '"' => {
                            i += off + 1;
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => s.push(e),
                            _ => return Err(malformed(i + off, "bad escape in string literal")),
                        },
                        ch => s.push(ch),
                    }
                }
                if !closed {
                    return Err(malformed(start, "unterminated string literal"));
                }
                out.push((start, Tok::Str(s)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => return Err(malformed(i, "unexpected character")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, message: &str) -> ExprError {
        ExprError::Malformed {
            pos: self.offset(),
            message: message.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        if let Some(Tok::Op(op @ (BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Gt))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.sum()?;
            return Ok(Expr::Binary(Box::new(lhs), op, Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.atom()?;
        while let Some(Tok::Op(op @ (BinOp::Add | BinOp::Sub))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = Expr::Binary(Box::new(lhs), op, Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = self.peek().cloned().ok_or_else(|| self.error("expected an operand"))?;
        self.pos += 1;
        match tok {
            Tok::Int(n) => Ok(Expr::Lit(Value::Int(n))),
            Tok::Str(s) => Ok(Expr::Lit(Value::Str(s))),
            Tok::Ident(name) => Ok(match name.as_str() {
                "true" => Expr::Lit(Value::Bool(true)),
                "false" => Expr::Lit(Value::Bool(false)),
                _ => Expr::Var(name),
            }),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.error("expected `)`")),
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.error("expected an operand"))
            }
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

impl Expr {
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Var(v) => out.push(v),
            Expr::Binary(l, _, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Lit(_) => {}
        }
    }

    /// Static type of the expression given variable types.
    pub fn type_of(&self, lookup: &dyn Fn(&str) -> Option<Type>) -> Result<Type, ExprError> {
        match self {
            Expr::Lit(v) => Ok(v.ty()),
            Expr::Var(name) => lookup(name).ok_or_else(|| ExprError::UnknownVariable(name.clone())),
            Expr::Binary(l, op, r) => {
                let (lt, rt) = (l.type_of(lookup)?, r.type_of(lookup)?);
                match op {
                    BinOp::Eq | BinOp::Ne if lt == rt => Ok(Type::Bool),
                    BinOp::Lt | BinOp::Gt if lt == Type::Int && rt == Type::Int => Ok(Type::Bool),
                    BinOp::Add | BinOp::Sub if lt == Type::Int && rt == Type::Int => Ok(Type::Int),
                    _ => Err(ExprError::TypeMismatch(format!(
                        "`{}` applied to {lt} and {rt}",
                        op.symbol()
                    ))),
                }
            }
        }
    }

    /// Evaluates against a variable store. Integer arithmetic saturates.
    pub fn eval(&self, vars: &BTreeMap<String, Value>) -> Result<Value, ExprError> {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Var(name) => vars
                .get(name)
                .cloned()
                .ok_or_else(|| ExprError::UnknownVariable(name.clone())),
            Expr::Binary(l, op, r) => {
                let (lv, rv) = (l.eval(vars)?, r.eval(vars)?);
                match (op, lv, rv) {
                    (BinOp::Eq, a, b) if a.ty() == b.ty() => Ok(Value::Bool(a == b)),
                    (BinOp::Ne, a, b) if a.ty() == b.ty() => Ok(Value::Bool(a != b)),
                    (BinOp::Lt, Value::Int(a), Value::Int(b)) => Ok(Value::Bool(a < b)),
                    (BinOp::Gt, Value::Int(a), Value::Int(b)) => Ok(Value::Bool(a > b)),
                    (BinOp::Add, Value::Int(a), Value::Int(b)) => Ok(Value::Int(a.saturating_add(b))),
                    (BinOp::Sub, Value::Int(a), Value::Int(b)) => Ok(Value::Int(a.saturating_sub(b))),
                    (op, a, b) => Err(ExprError::TypeMismatch(format!(
                        "`{}` applied to {} and {}",
                        op.symbol(),
                        a.ty(),
                        b.ty()
                    ))),
                }
            }
        }
    }
}
