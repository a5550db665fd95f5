//! Canonical text form of symbols and the expression grammar shared with the CLI.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' '-'? integer)?
//! atom  := integer | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `i` is the imaginary unit. Division and negative powers are only allowed
//! when the divisor is a unit of the coefficient ring (no coordinates).

use std::fmt::Write as _;
use std::sync::Arc;

use super::{PhaseSpace, Symbol};
use crate::error::{Error, Result};
use crate::rational::{Coefficient, Rational};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(Rational),
    Name(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(String, Vec<Expr>),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let neg = self.eat(b'-');
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return self.err("expected integer exponent");
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let e: i32 = match digits.parse() {
                Ok(e) if e <= i16::MAX as i32 => e,
                _ => return self.err("exponent too large"),
            };
            return Ok(Expr::Pow(Box::new(base), if neg { -e } else { e }));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected `)`");
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos < self.src.len() && matches!(self.src[self.pos], b'.' | b'e' | b'E') {
                    return self.err("decimal literals are not supported; write a fraction");
                }
                let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                Ok(Expr::Int(digits.parse().expect("digit string")))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii").to_string();
                if self.eat(b'(') {
                    let mut args = vec![self.expr()?];
                    while self.eat(b',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(b')') {
                        return self.err("expected `)` after arguments");
                    }
                    return Ok(Expr::Call(name, args));
                }
                Ok(Expr::Name(name))
            }
            Some(c) => self.err(format!("unexpected character `{}`", c as char)),
            None => self.err("unexpected end of input"),
        }
    }
}

pub fn parse_ast(src: &str) -> Result<Expr> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(e)
}

impl Expr {
    /// Evaluates over `space`. Names resolve to coordinates/generators, `i`,
    /// or through `lookup`; calls go to `call`.
    pub fn eval(
        &self,
        space: &Arc<PhaseSpace>,
        lookup: &dyn Fn(&str) -> Option<Symbol>,
        call: &dyn Fn(&str, &[Symbol]) -> Result<Symbol>,
    ) -> Result<Symbol> {
        let ev = |e: &Expr| e.eval(space, lookup, call);
        Ok(match self {
            Expr::Int(r) => Symbol::rational(space, r.clone()),
            Expr::Name(n) if n == "i" => Symbol::constant(space, Coefficient::I),
            Expr::Name(n) => match Symbol::var(space, n) {
                Ok(s) => s,
                Err(_) => lookup(n).ok_or_else(|| Error::UnknownName(n.clone()))?,
            },
            Expr::Neg(a) => -&ev(a)?,
            Expr::Add(a, b) => ev(a)?.try_add(&ev(b)?)?,
            Expr::Sub(a, b) => ev(a)?.try_sub(&ev(b)?)?,
            Expr::Mul(a, b) => ev(a)?.try_mul(&ev(b)?)?,
            Expr::Div(a, b) => {
                let d = ev(b)?;
                if d.is_zero() {
                    return Err(Error::NotInvertible("division by zero".into()));
                }
                ev(a)?.try_mul(&d.inverse_unit()?)?
            }
            Expr::Pow(a, e) => {
                let base = ev(a)?;
                if *e >= 0 {
                    base.pow(*e as u32)
                } else {
                    base.inverse_unit()?.pow(e.unsigned_abs())
                }
            }
            Expr::Call(f, args) => {
                let vals = args.iter().map(ev).collect::<Result<Vec<_>>>()?;
                call(f, &vals)?
            }
        })
    }
}

pub(super) fn parse_symbol(space: &Arc<PhaseSpace>, src: &str) -> Result<Symbol> {
    parse_ast(src)?.eval(space, &|_| None, &|f, _| Err(Error::UnknownName(format!("{f}(...)"))))
}

fn fmt_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.to_string()
    } else {
        format!("({r})")
    }
}

/// Writes `|c|` (sign handled by the caller) and returns whether anything was written.
fn fmt_coefficient(c: &Coefficient, out: &mut String) -> bool {
    if c.im.is_zero() {
        if c.re.is_one() {
            return false;
        }
        out.push_str(&fmt_rational(&c.re));
    } else if c.re.is_zero() {
        if !c.im.is_one() {
            out.push_str(&fmt_rational(&c.im));
            out.push('*');
        }
        out.push('i');
    } else {
        let im_abs = c.im.abs();
        let sign = if c.im.signum() < 0 { '-' } else { '+' };
        if im_abs.is_one() {
            let _ = write!(out, "({} {sign} i)", c.re);
        } else {
            let _ = write!(out, "({} {sign} {}*i)", c.re, fmt_rational(&im_abs));
        }
    }
    true
}

pub(super) fn print_symbol(s: &Symbol) -> String {
    if s.is_zero() {
        return "0".to_string();
    }
    let space = s.space();
    let mut out = String::new();
    for (k, (m, c)) in s.terms().iter().enumerate() {
        let negative = c.leading_sign() < 0;
        let c = if negative { -c } else { c.clone() };
        match (k, negative) {
            (0, true) => out.push('-'),
            (0, false) => {}
            (_, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
        }
        let mut parts = String::new();
        let wrote = fmt_coefficient(&c, &mut parts);
        for v in 0..space.nvars() {
            let e = m.exp(v);
            if e == 0 {
                continue;
            }
            if !parts.is_empty() {
                parts.push('*');
            }
            parts.push_str(space.var_name(v));
            if e != 1 {
                let _ = write!(parts, "^{e}");
            }
        }
        if parts.is_empty() && !wrote {
            parts.push('1');
        }
        out.push_str(&parts);
    }
    out
}
