//! Closed-form expressions for profiles, fields and conformal factors.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. Names are `r`, `z`, `phi`, `x`, `y`, `pi`, `e`; functions are
//! `sin cos tan exp ln sqrt`.

use crate::error::{Error, Result};
use crate::jet::Real;

/// Variable slots shared by all expression evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    R = 0,
    Phi = 1,
    Z = 2,
    X = 3,
    Y = 4,
}

pub const N_VARS: usize = 5;

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::R => "r",
            Var::Phi => "phi",
            Var::Z => "z",
            Var::X => "x",
            Var::Y => "y",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    PowF(Box<Node>, f64),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression together with its source text.
#[derive(Clone, Debug)]
pub struct Expr {
    src: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { s: src.as_bytes(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Expr { src: src.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    /// Variables referenced anywhere in the expression.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out
    }

    pub fn uses(&self, v: Var) -> bool {
        self.vars().contains(&v)
    }

    pub fn eval<T: Real>(&self, vars: &[T; N_VARS]) -> T {
        eval(&self.root, vars)
    }

    pub fn eval_f64(&self, vars: &[f64; N_VARS]) -> f64 {
        eval(&self.root, vars)
    }
}

fn collect_vars(n: &Node, out: &mut Vec<Var>) {
    match n {
        Node::Num(_) => {}
        Node::Var(v) => {
            if !out.contains(v) {
                out.push(*v)
            }
        }
        Node::Neg(a) | Node::PowI(a, _) | Node::PowF(a, _) | Node::Call(_, a) => collect_vars(a, out),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

fn eval<T: Real>(n: &Node, v: &[T; N_VARS]) -> T {
    match n {
        Node::Num(c) => T::cst(*c),
        Node::Var(k) => v[*k as usize],
        Node::Neg(a) => -eval(a, v),
        Node::Add(a, b) => eval(a, v) + eval(b, v),
        Node::Sub(a, b) => eval(a, v) - eval(b, v),
        Node::Mul(a, b) => eval(a, v) * eval(b, v),
        Node::Div(a, b) => eval(a, v) / eval(b, v),
        Node::PowI(a, k) => eval(a, v).powi(*k),
        Node::PowF(a, p) => eval(a, v).powf(*p),
        Node::Pow(a, b) => (eval(b, v) * eval(a, v).ln()).exp(),
        Node::Call(f, a) => {
            let x = eval(a, v);
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Ln => x.ln(),
                Func::Sqrt => x.sqrt(),
            }
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse { line: 1, column: self.pos + 1, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let exp = self.unary()?;
        let lit = match &exp {
            Node::Num(c) => Some(*c),
            Node::Neg(inner) => match inner.as_ref() {
                Node::Num(c) => Some(-*c),
                _ => None,
            },
            _ => None,
        };
        Ok(match lit {
            Some(c) if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 => Node::PowI(Box::new(base), c as i32),
            Some(c) => Node::PowF(Box::new(base), c),
            None => Node::Pow(Box::new(base), Box::new(exp)),
        })
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
                let func = match name {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "tan" => Some(Func::Tan),
                    "exp" => Some(Func::Exp),
                    "ln" => Some(Func::Ln),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    if !self.eat(b'(') {
                        return Err(self.err("expected '(' after function name"));
                    }
                    let arg = self.expr()?;
                    if !self.eat(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                match name {
                    "r" => Ok(Node::Var(Var::R)),
                    "phi" => Ok(Node::Var(Var::Phi)),
                    "z" => Ok(Node::Var(Var::Z)),
                    "x" => Ok(Node::Var(Var::X)),
                    "y" => Ok(Node::Var(Var::Y)),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => {
                        self.pos = start;
                        Err(self.err(&format!("unknown name '{name}'")))
                    }
                }
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let s = self.s;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        let txt = std::str::from_utf8(&s[start..i]).unwrap_or("");
        txt.parse::<f64>().map(Node::Num).map_err(|_| {
            self.pos = start;
            self.err(&format!("malformed number '{txt}'"))
        })
    }
}

/// Build a variable array with every slot set to `fill` except those given.
pub fn vars_with<T: Real>(fill: T, set: &[(Var, T)]) -> [T; N_VARS] {
    let mut v = [fill; N_VARS];
    for (k, x) in set {
        v[*k as usize] = *x;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet3;

    fn ev(src: &str, x: f64) -> f64 {
        Expr::parse(src).unwrap().eval_f64(&vars_with(0.0, &[(Var::X, x), (Var::Z, x), (Var::R, x)]))
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert!((ev("2^3^2", 0.0) - 512.0).abs() < 1e-12);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("(1 - 2) - 3", 0.0), -4.0);
        assert_eq!(ev("8 / 2 / 2", 0.0), 2.0);
        assert!((ev("2*pi", 0.0) - 2.0 * std::f64::consts::PI).abs() < 1e-15);
        assert!((ev("ln(e)", 0.0) - 1.0).abs() < 1e-15);
        assert!((ev("1.5e-1 + 2E1", 0.0) - 20.15).abs() < 1e-12);
    }

    #[test]
    fn functions_and_variables() {
        let x = 0.4;
        assert!((ev("sin(x)^2 + cos(x)^2", x) - 1.0).abs() < 1e-15);
        assert!((ev("sqrt(2/(z+3))", x) - (2.0 / 3.4f64).sqrt()).abs() < 1e-15);
        assert!((ev("tan(x) - sin(x)/cos(x)", x)).abs() < 1e-15);
        assert!((ev("x^x", x) - x.powf(x)).abs() < 1e-15);
        let e = Expr::parse("2 + z^3 + phi").unwrap();
        assert_eq!(e.vars(), vec![Var::Z, Var::Phi]);
    }

    #[test]
    fn derivatives_through_expression() {
        let e = Expr::parse("sin(r)*(1 + 0.1*sin(r)^2)").unwrap();
        let r = 0.9;
        let j: Jet3 = e.eval(&vars_with(Jet3::constant(0.0), &[(Var::R, Jet3::var(r))]));
        let exact1 = r.cos() * (1.0 + 0.3 * r.sin().powi(2));
        assert!((j.d[1] - exact1).abs() < 1e-14);
    }

    #[test]
    fn errors_report_column() {
        match Expr::parse("1 + foo") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("2 3").is_err());
        assert!(Expr::parse("sin 2").is_err());
    }
}
