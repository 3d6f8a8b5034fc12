//! A small arithmetic language for defining functions `ρ(z, t)` on `C^d`.
//!
//! Grammar: `+ - * / ^`, parentheses, numbers, `pi`, the parameter `t`,
//! real coordinates `x1, y1, x2, …`, `Re(zk)`, `Im(zk)`, moduli `|zk|` and
//! `|z|` (the full vector), and the functions `exp, ln, sqrt, sin, cos`.
//! `flat(u)` is `e^{−1/|u|}` extended by 0, allowed on `t` only.
//! Exponents must be constant.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at column {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

/// Real variables: `X(k)` and `Y(k)` are the real and imaginary parts of
/// `z_{k+1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X(usize),
    Y(usize),
    T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Flat,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    /// `Σ |z_k|²` over the listed indices.
    Abs2(Vec<usize>),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, f64),
    Call(Func, Arc<Expr>),
}

fn num(c: f64) -> Expr {
    Expr::Num(c)
}

fn is_num(e: &Expr, c: f64) -> bool {
    matches!(e, Expr::Num(v) if *v == c)
}

// Constructors that fold the trivial cases, keeping derivatives compact.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Expr::Add(Arc::new(a), Arc::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Expr::Sub(Arc::new(a), Arc::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Mul(Arc::new(a), Arc::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x / y),
        _ if is_num(&a, 0.0) => num(0.0),
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Div(Arc::new(a), Arc::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => num(-x),
        Expr::Neg(inner) => (*inner).clone(),
        other => Expr::Neg(Arc::new(other)),
    }
}

fn pow(a: Expr, p: f64) -> Expr {
    match a {
        _ if p == 0.0 => num(1.0),
        _ if p == 1.0 => a,
        Expr::Num(x) => num(x.powf(p)),
        other => Expr::Pow(Arc::new(other), p),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match (f, &a) {
        (Func::Flat, Expr::Num(x)) => num(flat_f64(*x)),
        (Func::Exp, Expr::Num(x)) => num(x.exp()),
        _ => Expr::Call(f, Arc::new(a)),
    }
}

/// `e^{−1/|u|}`, `0` at `u = 0`.
pub fn flat_f64(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        (-1.0 / u.abs()).exp()
    }
}

fn flat<S: Scalar>(u: &S) -> S {
    let v = u.value();
    if v == 0.0 {
        u.lift(0.0)
    } else if v > 0.0 {
        (-u.recip()).exp()
    } else {
        u.recip().exp()
    }
}

impl Expr {
    pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
            dim,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval<S: Scalar>(&self, x: &[S], t: f64) -> S {
        match self {
            Expr::Num(c) => x[0].lift(*c),
            Expr::Var(Var::X(k)) => x[2 * k].clone(),
            Expr::Var(Var::Y(k)) => x[2 * k + 1].clone(),
            Expr::Var(Var::T) => x[0].lift(t),
            Expr::Abs2(ks) => {
                let mut acc = x[0].lift(0.0);
                for &k in ks {
                    acc = acc + x[2 * k].square() + x[2 * k + 1].square();
                }
                acc
            }
            Expr::Neg(a) => -a.eval(x, t),
            Expr::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Expr::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Expr::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Expr::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Expr::Pow(a, p) => {
                let v = a.eval(x, t);
                if p.fract() == 0.0 && p.abs() < 64.0 {
                    v.powi(*p as i32)
                } else {
                    v.powf(*p)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, t);
                match f {
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Flat => flat(&v),
                }
            }
        }
    }

    pub fn depends_on_space(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(Var::T) => false,
            Expr::Var(_) | Expr::Abs2(_) => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_space(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_space() || b.depends_on_space()
            }
        }
    }

    /// Symbolic partial derivative in a spatial variable.
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(w) => num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Abs2(ks) => match v {
                Var::X(k) | Var::Y(k) if ks.contains(&k) => mul(num(2.0), Expr::Var(v)),
                _ => num(0.0),
            },
            Expr::Neg(a) => neg(a.diff(v)),
            Expr::Add(a, b) => add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => add(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v))),
            Expr::Div(a, b) => {
                let num_part = sub(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v)));
                div(num_part, pow((**b).clone(), 2.0))
            }
            Expr::Pow(a, p) => mul(mul(num(*p), pow((**a).clone(), p - 1.0)), a.diff(v)),
            Expr::Call(f, a) => {
                let da = a.diff(v);
                if is_num(&da, 0.0) {
                    return num(0.0);
                }
                let u = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, u),
                    Func::Ln => div(num(1.0), u),
                    Func::Sqrt => div(num(0.5), call(Func::Sqrt, u)),
                    Func::Sin => call(Func::Cos, u),
                    Func::Cos => neg(call(Func::Sin, u)),
                    // the argument of `flat` never depends on space
                    Func::Flat => num(0.0),
                };
                mul(outer, da)
            }
        }
    }

    /// Replaces every spatial coordinate `u_i` by `Σ_j a[i][j] u_j` (real
    /// coordinates ordered `x1, y1, x2, …`).
    pub fn substitute_linear(&self, a: &[Vec<f64>]) -> Expr {
        let coord = |i: usize| -> Expr {
            let mut acc = num(0.0);
            for (j, c) in a[i].iter().enumerate() {
                if *c != 0.0 {
                    let var = if j % 2 == 0 {
                        Var::X(j / 2)
                    } else {
                        Var::Y(j / 2)
                    };
                    acc = add(acc, mul(num(*c), Expr::Var(var)));
                }
            }
            acc
        };
        match self {
            Expr::Num(_) | Expr::Var(Var::T) => self.clone(),
            Expr::Var(Var::X(k)) => coord(2 * k),
            Expr::Var(Var::Y(k)) => coord(2 * k + 1),
            Expr::Abs2(ks) => ks.iter().fold(num(0.0), |acc, &k| {
                add(acc, add(pow(coord(2 * k), 2.0), pow(coord(2 * k + 1), 2.0)))
            }),
            Expr::Neg(e) => neg(e.substitute_linear(a)),
            Expr::Add(x, y) => add(x.substitute_linear(a), y.substitute_linear(a)),
            Expr::Sub(x, y) => sub(x.substitute_linear(a), y.substitute_linear(a)),
            Expr::Mul(x, y) => mul(x.substitute_linear(a), y.substitute_linear(a)),
            Expr::Div(x, y) => div(x.substitute_linear(a), y.substitute_linear(a)),
            Expr::Pow(e, p) => pow(e.substitute_linear(a), *p),
            Expr::Call(f, e) => call(*f, e.substitute_linear(a)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(Var::X(k)) => write!(f, "x{}", k + 1),
            Expr::Var(Var::Y(k)) => write!(f, "y{}", k + 1),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Abs2(ks) => {
                let parts: Vec<String> = ks.iter().map(|k| format!("|z{}|^2", k + 1)).collect();
                write!(f, "({})", parts.join(" + "))
            }
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, p) => write!(f, "({a})^({p})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Ln => "ln",
                    Func::Sqrt => "sqrt",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Flat => "flat",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            pos: self.pos + 1,
            msg: msg.into(),
        }
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

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                acc = add(acc, self.term()?);
            } else if self.eat(b'-') {
                acc = sub(acc, self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(b'*') {
                acc = mul(acc, self.unary()?);
            } else if self.eat(b'/') {
                acc = div(acc, self.unary()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(neg(self.unary()?));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let (base, modulus) = self.atom()?;
        if !self.eat(b'^') {
            return Ok(match modulus {
                Some(ks) => call(Func::Sqrt, Expr::Abs2(ks)),
                None => base,
            });
        }
        let at = self.pos;
        let exponent = self.unary()?;
        let Expr::Num(p) = exponent else {
            self.pos = at;
            return Err(self.err("exponent must be a constant"));
        };
        Ok(match modulus {
            Some(ks) => pow(Expr::Abs2(ks), p / 2.0),
            None => pow(base, p),
        })
    }

    /// An atom; moduli `|…|` are returned separately so that `|z|^2` stays
    /// polynomial.
    fn atom(&mut self) -> Result<(Expr, Option<Vec<usize>>), ParseError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok((e, None))
            }
            Some(b'|') => {
                self.pos += 1;
                let ks = self.complex_var()?;
                self.expect(b'|')?;
                Ok((num(0.0), Some(ks)))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok((self.number()?, None)),
            Some(c) if c.is_ascii_alphabetic() => Ok((self.ident()?, None)),
            Some(c) => Err(self.err(format!("unexpected '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let exp_sign = (c == b'+' || c == b'-')
                && self.pos > start
                && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(num).map_err(|_| ParseError {
            pos: start + 1,
            msg: format!("bad number '{text}'"),
        })
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn index(&self, name: &str, prefix: &str) -> Option<usize> {
        let k: usize = name.strip_prefix(prefix)?.parse().ok()?;
        (k >= 1 && k <= self.dim).then_some(k - 1)
    }

    /// `zk` or `z` inside `|…|`, `Re(…)`, `Im(…)`.
    fn complex_var(&mut self) -> Result<Vec<usize>, ParseError> {
        let at = self.pos;
        let w = self.word();
        if w == "z" {
            return Ok((0..self.dim).collect());
        }
        match self.index(&w, "z") {
            Some(k) => Ok(vec![k]),
            None => {
                self.pos = at;
                Err(self.err(format!("expected z1..z{} or z", self.dim)))
            }
        }
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let at = self.pos;
        let w = self.word();
        let func = match w.as_str() {
            "exp" => Some(Func::Exp),
            "ln" | "log" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "flat" => Some(Func::Flat),
            _ => None,
        };
        if let Some(f) = func {
            self.expect(b'(')?;
            let arg_at = self.pos;
            let arg = self.expr()?;
            self.expect(b')')?;
            if f == Func::Flat && arg.depends_on_space() {
                self.pos = arg_at;
                return Err(self.err("flat() takes an expression in t only"));
            }
            return Ok(call(f, arg));
        }
        if w == "Re" || w == "Im" {
            self.expect(b'(')?;
            let ks = self.complex_var()?;
            self.expect(b')')?;
            if ks.len() != 1 {
                return Err(self.err("Re/Im take a single coordinate"));
            }
            return Ok(Expr::Var(if w == "Re" {
                Var::X(ks[0])
            } else {
                Var::Y(ks[0])
            }));
        }
        if w == "t" {
            return Ok(Expr::Var(Var::T));
        }
        if w == "pi" {
            return Ok(num(std::f64::consts::PI));
        }
        if let Some(k) = self.index(&w, "x") {
            return Ok(Expr::Var(Var::X(k)));
        }
        if let Some(k) = self.index(&w, "y") {
            return Ok(Expr::Var(Var::Y(k)));
        }
        self.pos = at;
        Err(self.err(format!("unknown identifier '{w}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::Jet;

    fn ev(src: &str, x: &[f64], t: f64) -> f64 {
        Expr::parse(src, x.len() / 2).unwrap().eval(x, t)
    }

    #[test]
    fn parses_and_evaluates() {
        let x = [0.3, -0.4];
        assert!((ev("|z1|^2 - 1 - t", &x, 0.5) - (0.25 - 1.5)).abs() < 1e-15);
        assert!((ev("|z|", &x, 0.0) - 0.5).abs() < 1e-15);
        assert!((ev("Re(z1)*2 + Im(z1)^3", &x, 0.0) - (0.6 - 0.064)).abs() < 1e-15);
        assert!((ev("-2^2", &x, 0.0) + 4.0).abs() < 1e-15);
        assert!((ev("exp(-1/t)", &x, 0.25) - (-4.0f64).exp()).abs() < 1e-15);
        assert!((ev("flat(t)", &x, -0.25) - (-4.0f64).exp()).abs() < 1e-15);
        assert_eq!(ev("flat(t)", &x, 0.0), 0.0);
        assert!((ev("1.5e-1 * x1 / y1", &x, 0.0) - 0.15 * 0.3 / -0.4).abs() < 1e-15);
    }

    #[test]
    fn reports_errors_with_columns() {
        let e = Expr::parse("|z1|^2 + w", 1).unwrap_err();
        assert_eq!(e.pos, 10);
        assert!(Expr::parse("x1^y1", 1).is_err());
        assert!(Expr::parse("|z2|^2", 1).is_err());
        assert!(Expr::parse("flat(x1)", 1).is_err());
        assert!(Expr::parse("(1 + x1", 1).is_err());
        assert!(Expr::parse("1 2", 1).is_err());
    }

    #[test]
    fn derivatives_match_jets() {
        let src = "|z1|^2/4 + |z2|^2 - 1 + 0.3*exp(-(x1 - 0.2)^2)*sin(y2) + sqrt(2 + x2)*t";
        let e = Expr::parse(src, 2).unwrap();
        let p = [0.1, -0.2, 0.4, 0.3];
        let vars: Vec<Jet> = (0..4).map(|i| Jet::variable(4, 1, i, p[i])).collect();
        let j = e.eval(&vars, 0.7);
        for (i, v) in [Var::X(0), Var::Y(0), Var::X(1), Var::Y(1)]
            .into_iter()
            .enumerate()
        {
            let d = e.diff(v).eval(&p, 0.7);
            assert!((d - j.coeffs()[1 + i]).abs() < 1e-14, "{v:?}");
        }
    }

    #[test]
    fn linear_substitution_rotates() {
        let e = Expr::parse("(x1 - 0.5)^2 + 2*y1^2", 1).unwrap();
        let (s, c) = 0.4f64.sin_cos();
        // ρ∘R⁻¹ with R the rotation by 0.4
        let rinv = vec![vec![c, s], vec![-s, c]];
        let r = e.substitute_linear(&rinv);
        let z = [0.2, 0.7];
        let rz = [c * z[0] - s * z[1], s * z[0] + c * z[1]];
        assert!((r.eval(&rz, 0.0) - e.eval(&z, 0.0)).abs() < 1e-14);
    }
}
