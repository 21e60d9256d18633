//! Arithmetic expressions for user-defined weight functions `f(u)`.
//!
//! The grammar is deliberately small: numeric literals, the variable `u`
//! (`x` is accepted as an alias), the binary operators `+ - * / ^`, unary
//! minus, parentheses and the functions `exp log sin cos sqrt abs`.
//!
//! Precedence from tightest to loosest is `^`, unary `-`, `* /`, `+ -`.
//! `^` is right-associative and its exponent may carry a unary minus, so
//! `2^-1` is `0.5` while `-2^2` is `-4`.

use std::fmt;

use crate::error::{Error, Result};
use crate::quadrature::{self, Endpoint, QuadratureSpec, Singularity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const UNARY_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 6] = [
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Sqrt,
        Func::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Expression tree over the single variable `u`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(_) | Expr::Var | Expr::Call(..) => ATOM_PRECEDENCE,
            Expr::Neg(_) => UNARY_PRECEDENCE,
            Expr::Binary(op, ..) => op.precedence(),
        }
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var => u,
            Expr::Neg(e) => -e.eval(u)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval(u)?;
                let b = r.eval(u)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Domain(format!("division by zero at u = {u}")));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, arg) => {
                let a = arg.eval(u)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(Error::Domain(format!(
                                "log of non-positive value {a} at u = {u}"
                            )));
                        }
                        a.ln()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(Error::Domain(format!(
                                "sqrt of negative value {a} at u = {u}"
                            )));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("`{self}` is not finite at u = {u}")))
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::Var => f.write_str("u"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_child(f, UNARY_PRECEDENCE)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                if *op == BinOp::Pow {
                    l.fmt_child(f, p + 1)?;
                    f.write_str("^")?;
                    r.fmt_child(f, UNARY_PRECEDENCE)
                } else {
                    l.fmt_child(f, p)?;
                    write!(f, " {} ", op.symbol())?;
                    r.fmt_child(f, p + 1)
                }
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next_token()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next_token(&mut self) -> Result<(Tok, usize)> {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number(start).map(|n| (Tok::Num(n), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        self.pos += c.len_utf8();
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            other => {
                return Err(Error::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<f64> {
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(Error::Syntax {
                pos: start,
                msg: format!("numeric literal `{text}` is out of range"),
            }),
            Err(_) => Err(Error::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            }),
        }
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> usize {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> Error {
        let found = match self.peek() {
            Tok::Num(x) => format!("number {x}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        };
        Error::Syntax {
            pos: self.pos(),
            msg: format!("expected {expected}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Num(x))
            }
            Tok::Ident(name) => {
                self.bump();
                if name == "u" || name == "x" {
                    return Ok(Expr::Var);
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(Error::UnknownIdentifier { name, pos });
                };
                if *self.peek() != Tok::LParen {
                    return Err(self.unexpected(&format!("`(` after `{name}`")));
                }
                self.bump();
                let arg = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.unexpected("a number, `u`, a function or `(`")),
        }
    }
}

/// Parse `text` into an expression tree.
pub fn parse_expr(text: &str) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::EmptyExpression);
    }
    let toks = Lexer::tokenize(text)?;
    let mut p = Parser { toks, i: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("end of input"));
    }
    Ok(e)
}

/// A parsed weight function together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightExpr {
    pub ast: Expr,
    pub source: String,
    /// Declared power-law exponent of an origin singularity, `f(u) ~ u^alpha`.
    pub singularity_exponent_hint: Option<f64>,
}

impl WeightExpr {
    pub fn with_singularity(mut self, exponent: f64) -> Result<Self> {
        if !(exponent > -1.0) || !exponent.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "singularity exponent must be > -1, got {exponent}"
            )));
        }
        self.singularity_exponent_hint = Some(exponent);
        Ok(self)
    }
}

impl fmt::Display for WeightExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

pub fn parse_weight(text: &str) -> Result<WeightExpr> {
    let ast = parse_expr(text)?;
    Ok(WeightExpr {
        ast,
        source: text.trim().to_string(),
        singularity_exponent_hint: None,
    })
}

/// Evaluate the weight at `u`; the weight must be finite and non-negative there.
pub fn eval_weight(expr: &WeightExpr, u: f64) -> Result<f64> {
    if u < 0.0 || u.is_nan() {
        return Err(Error::Domain(format!("weight evaluated at negative u = {u}")));
    }
    let v = expr.ast.eval(u)?;
    if v < 0.0 {
        return Err(Error::NegativeWeight { u, value: v });
    }
    Ok(v)
}

/// Local power-law exponent of `f` at the origin from the log-slope
/// between `u = 1e-12` and `u = 1e-10`; `None` unless it lies in `(-1, -0.01)`.
pub fn estimate_origin_exponent(expr: &WeightExpr) -> Option<f64> {
    let (u1, u2) = (1e-12, 1e-10);
    let f1 = eval_weight(expr, u1).ok()?;
    let f2 = eval_weight(expr, u2).ok()?;
    if !(f1 > 0.0 && f2 > 0.0 && f1.is_finite()) {
        return None;
    }
    let slope = (f2 / f1).ln() / (u2 / u1).ln();
    (slope > -1.0 && slope < -0.01).then_some(slope)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrabilityCertificate {
    pub ok: bool,
    pub estimated_integral: f64,
}

/// Adaptive quadrature never samples the origin, so a non-integrable spike
/// can still produce a finite answer. Integrate over the shells
/// `[δ·10^{-3(k+1)}, δ·10^{-3k}]` and require their mass to shrink.
fn tail_shrinks<F: Fn(f64) -> Result<f64>>(f: &F, delta: f64) -> Result<bool> {
    let spec = QuadratureSpec::default();
    let mut masses = Vec::with_capacity(5);
    for k in 0..5 {
        let hi = delta * 10f64.powi(-3 * k);
        let lo = hi * 1e-3;
        match quadrature::try_integrate(f, lo, hi, &spec) {
            Ok(est) => masses.push(est.value.abs()),
            Err(Error::NonConvergence { .. }) | Err(Error::NonFiniteIntegrand { .. }) => return Ok(false),
            Err(e) => return Err(e),
        }
    }
    let last = masses[4];
    if last == 0.0 {
        return Ok(true);
    }
    Ok(!(last >= 0.99 * masses[3] && masses[3] >= 0.99 * masses[2]))
}

/// Numerically check that `∫_0^delta f(u) du` is finite.
pub fn check_integrability(expr: &WeightExpr, delta: f64) -> Result<IntegrabilityCertificate> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let spec = QuadratureSpec {
        singularity: expr.singularity_exponent_hint.map(|exponent| Singularity {
            endpoint: Endpoint::Left,
            exponent,
        }),
        ..QuadratureSpec::default()
    };
    let f = |u: f64| eval_weight(expr, u);
    match quadrature::try_integrate(f, 0.0, delta, &spec) {
        Ok(est) if est.value.is_finite() => {
            if spec.singularity.is_none() && !tail_shrinks(&f, delta)? {
                return Err(Error::Divergence(format!(
                    "mass of `{}` near 0 does not decay under refinement toward the origin",
                    expr.source
                )));
            }
            Ok(IntegrabilityCertificate {
                ok: true,
                estimated_integral: est.value,
            })
        }
        Ok(est) => Err(Error::Divergence(format!(
            "integral of `{}` over [0, {delta}] evaluated to {}",
            expr.source, est.value
        ))),
        Err(Error::NonConvergence { .. }) | Err(Error::NonFiniteIntegrand { .. }) => {
            Err(Error::Divergence(format!(
                "adaptive refinement of `{}` does not converge on [0, {delta}]",
                expr.source
            )))
        }
        // overflow close to the origin while the interior is fine
        Err(Error::Domain(msg)) if eval_weight(expr, 0.5 * delta).is_ok() => Err(Error::Divergence(
            format!("`{}` blows up near 0: {msg}", expr.source),
        )),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(text: &str, u: f64) -> f64 {
        parse_expr(text).unwrap().eval(u).unwrap()
    }

    #[test]
    fn origin_exponent_estimate() {
        let a = estimate_origin_exponent(&parse_weight("u^(-0.93)").unwrap()).unwrap();
        assert!((a + 0.93).abs() < 1e-9);
        let b = estimate_origin_exponent(&parse_weight("exp(-u)/sqrt(u)").unwrap()).unwrap();
        assert!((b + 0.5).abs() < 1e-6);
        assert_eq!(estimate_origin_exponent(&parse_weight("1 + u").unwrap()), None);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2+3*4", 0.0), 14.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("(1+2)*3", 0.0), 9.0);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("--u", 3.0), 3.0);
    }

    #[test]
    fn example_weights_parse_and_evaluate() {
        let w = parse_weight("exp(-0.8*u)").unwrap();
        assert_eq!(eval_weight(&w, 0.0).unwrap(), 1.0);
        let w = parse_weight("u^(-0.93)").unwrap();
        assert_eq!(eval_weight(&w, 1.0).unwrap(), 1.0);
        let w = parse_weight("1-cos(u)*sin(u)").unwrap();
        assert_eq!(eval_weight(&w, 0.0).unwrap(), 1.0);
        let w = parse_weight("x*sqrt(x)*(1+sin(x))").unwrap();
        assert!((eval_weight(&w, 4.0).unwrap() - 8.0 * (1.0 + 4f64.sin())).abs() < 1e-12);
    }

    #[test]
    fn eval_examples() {
        let w = parse_weight("u^2").unwrap();
        assert_eq!(eval_weight(&w, 3.0).unwrap(), 9.0);
        let w = parse_weight("exp(-0.8*u)").unwrap();
        assert!((eval_weight(&w, 1.0).unwrap() - 0.449_328_964_117_221_6).abs() < 1e-15);
        let w = parse_weight("log(u)").unwrap();
        assert!(matches!(
            eval_weight(&w, 0.5),
            Err(Error::NegativeWeight { .. })
        ));
    }

    #[test]
    fn domain_errors() {
        let w = parse_weight("log(u)").unwrap();
        assert!(matches!(eval_weight(&w, 0.0), Err(Error::Domain(_))));
        let w = parse_weight("1/u").unwrap();
        assert!(matches!(eval_weight(&w, 0.0), Err(Error::Domain(_))));
        let w = parse_weight("sqrt(u-1)").unwrap();
        assert!(matches!(eval_weight(&w, 0.5), Err(Error::Domain(_))));
        let w = parse_weight("u^(-0.5)").unwrap();
        assert!(matches!(eval_weight(&w, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn parse_errors_are_positioned() {
        assert!(matches!(parse_weight(""), Err(Error::EmptyExpression)));
        assert!(matches!(parse_weight("   "), Err(Error::EmptyExpression)));
        match parse_weight("2 + * 3") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match parse_weight("exp(u) + foo(u)") {
            Err(Error::UnknownIdentifier { name, pos }) => {
                assert_eq!(name, "foo");
                assert_eq!(pos, 9);
            }
            other => panic!("{other:?}"),
        }
        match parse_weight("(u + 1") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_weight("u $ 2"), Err(Error::Syntax { pos: 2, .. })));
        assert!(matches!(parse_weight("1e999"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_weight("exp"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_weight("+u"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "exp(-0.8*u)",
            "u^(-0.93)",
            "1-cos(u)*sin(u)",
            "(1-sin(u))*(1-cos(u))",
            "u/(1+u)",
            "-(u-1)^2",
            "(-u)^2",
            "2^3^2",
            "(2^3)^2",
            "1-(2-3)",
            "1/(2/u)",
            "cos(u/(1+u))",
        ] {
            let a = parse_expr(text).unwrap();
            let b = parse_expr(&a.to_string()).unwrap();
            assert_eq!(a, b, "{text} -> {a}");
        }
    }

    #[test]
    fn integrability_certificates() {
        let w = parse_weight("u^(-0.5)").unwrap();
        let c = check_integrability(&w, 1.0).unwrap();
        assert!(c.ok);
        assert!((c.estimated_integral - 2.0).abs() < 1e-8);

        let w = parse_weight("u^(-0.5)").unwrap().with_singularity(-0.5).unwrap();
        let c = check_integrability(&w, 1.0).unwrap();
        assert!((c.estimated_integral - 2.0).abs() < 1e-8);

        let w = parse_weight("1").unwrap();
        let c = check_integrability(&w, 2.0).unwrap();
        assert!((c.estimated_integral - 2.0).abs() < 1e-14);

        let w = parse_weight("u^(-0.93)").unwrap();
        let c = check_integrability(&w, 1.0).unwrap();
        assert!((c.estimated_integral - 1.0 / 0.07).abs() < 1e-6 / 0.07, "{c:?}");

        let w = parse_weight("u^(-1.2)").unwrap();
        let r = check_integrability(&w, 1.0);
        assert!(matches!(r, Err(Error::Divergence(_))), "{r:?}");
        let w = parse_weight("1/u").unwrap();
        assert!(matches!(check_integrability(&w, 1.0), Err(Error::Divergence(_))));
    }

    #[test]
    fn singularity_hint_must_exceed_minus_one() {
        let w = parse_weight("u^(-1.2)").unwrap();
        assert!(w.clone().with_singularity(-1.2).is_err());
        assert!(w.with_singularity(-0.2).is_ok());
    }
}
