//! Tiny expression language for scenario data fields.
//!
//! Grammar (usual precedence, `^` binds tightest and associates right):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | 'pi' | 'e' | 't' | 'x' | 'y'
//!         | fn1 '(' expr ')' | fn2 '(' expr ',' expr ')' | '(' expr ')'
//! fn1    := 'sin' | 'cos' | 'exp' | 'abs'
//! fn2    := 'min' | 'max'
//! ```
//!
//! `-x^2` parses as `-(x^2)` and `2^-3` is accepted.

use std::fmt;

#[derive(Debug, Clone)]
pub struct ExprError {
    pub at: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at byte {})", self.message, self.at)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    Y,
}

#[derive(Debug, Clone, Copy)]
enum Fn1 {
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Debug, Clone, Copy)]
enum Fn2 {
    Min,
    Max,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call1(Fn1, Box<Node>),
    Call2(Fn2, Box<Node>, Box<Node>),
}

/// A parsed, immutable expression in the variables t, x, y.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr { root })
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        eval_node(&self.root, t, x, y)
    }

    /// Whether the expression mentions the given variable anywhere.
    pub fn uses(&self, var: Var) -> bool {
        uses_node(&self.root, var)
    }
}

fn eval_node(n: &Node, t: f64, x: f64, y: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(Var::T) => t,
        Node::Var(Var::X) => x,
        Node::Var(Var::Y) => y,
        Node::Neg(a) => -eval_node(a, t, x, y),
        Node::Add(a, b) => eval_node(a, t, x, y) + eval_node(b, t, x, y),
        Node::Sub(a, b) => eval_node(a, t, x, y) - eval_node(b, t, x, y),
        Node::Mul(a, b) => eval_node(a, t, x, y) * eval_node(b, t, x, y),
        Node::Div(a, b) => eval_node(a, t, x, y) / eval_node(b, t, x, y),
        Node::Pow(a, b) => eval_node(a, t, x, y).powf(eval_node(b, t, x, y)),
        Node::Call1(f, a) => {
            let v = eval_node(a, t, x, y);
            match f {
                Fn1::Sin => v.sin(),
                Fn1::Cos => v.cos(),
                Fn1::Exp => v.exp(),
                Fn1::Abs => v.abs(),
            }
        }
        Node::Call2(f, a, b) => {
            let u = eval_node(a, t, x, y);
            let v = eval_node(b, t, x, y);
            match f {
                Fn2::Min => u.min(v),
                Fn2::Max => u.max(v),
            }
        }
    }
}

fn uses_node(n: &Node, var: Var) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(v) => *v == var,
        Node::Neg(a) | Node::Call1(_, a) => uses_node(a, var),
        Node::Add(a, b)
        | Node::Sub(a, b)
        | Node::Mul(a, b)
        | Node::Div(a, b)
        | Node::Pow(a, b)
        | Node::Call2(_, a, b) => uses_node(a, var) || uses_node(b, var),
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ExprError {
        ExprError { at: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn accept(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.accept(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.accept(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.accept(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            if self.accept(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.accept(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        if self.accept(b'-') {
            Ok(Node::Neg(Box::new(self.factor()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.accept(b'^') {
            Ok(Node::Pow(Box::new(base), Box::new(self.factor()?)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.accept(b'(');
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.error("expected a number, name, or parenthesized expression")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        // exponent part: e/E then optional sign, at least one digit
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all ("2e" could start "2*e" misuse);
                // leave it to the caller as a trailing-input error
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| ExprError { at: start, message: format!("bad number literal '{text}'") })?;
        self.skip_ws();
        Ok(Node::Num(value))
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        self.skip_ws();
        match name.as_str() {
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            "t" => Ok(Node::Var(Var::T)),
            "x" => Ok(Node::Var(Var::X)),
            "y" => Ok(Node::Var(Var::Y)),
            "sin" | "cos" | "exp" | "abs" => {
                let f = match name.as_str() {
                    "sin" => Fn1::Sin,
                    "cos" => Fn1::Cos,
                    "exp" => Fn1::Exp,
                    _ => Fn1::Abs,
                };
                self.expect(b'(')?;
                let a = self.expr()?;
                self.expect(b')')?;
                Ok(Node::Call1(f, Box::new(a)))
            }
            "min" | "max" => {
                let f = if name == "min" { Fn2::Min } else { Fn2::Max };
                self.expect(b'(')?;
                let a = self.expr()?;
                self.expect(b',')?;
                let b = self.expr()?;
                self.expect(b')')?;
                Ok(Node::Call2(f, Box::new(a), Box::new(b)))
            }
            _ => Err(ExprError {
                at: start,
                message: format!(
                    "unknown name '{name}' (known: pi, e, t, x, y, sin, cos, exp, abs, min, max)"
                ),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The 50-case reference table: each expression is paired with a native
    /// closure computing the same value.
    #[allow(clippy::type_complexity)]
    fn reference_table() -> Vec<(&'static str, fn(f64, f64, f64) -> f64)> {
        use std::f64::consts::{E, PI};
        vec![
            ("0", |_, _, _| 0.0),
            ("1.5", |_, _, _| 1.5),
            ("-2", |_, _, _| -2.0),
            ("2e-3", |_, _, _| 2e-3),
            ("1.25E2", |_, _, _| 125.0),
            (".5", |_, _, _| 0.5),
            ("pi", |_, _, _| PI),
            ("e", |_, _, _| E),
            ("t", |t, _, _| t),
            ("x", |_, x, _| x),
            ("y", |_, _, y| y),
            ("t+x+y", |t, x, y| t + x + y),
            ("t-x-y", |t, x, y| t - x - y),
            ("2*x", |_, x, _| 2.0 * x),
            ("x/2", |_, x, _| x / 2.0),
            ("x^2", |_, x, _| x * x),
            ("x^0.5", |_, x, _| x.powf(0.5)),
            ("2^-3", |_, _, _| 0.125),
            ("-x^2", |_, x, _| -(x * x)),
            ("(-x)^2", |_, x, _| x * x),
            ("2^3^2", |_, _, _| 512.0), // right-associative
            ("1+2*3", |_, _, _| 7.0),
            ("(1+2)*3", |_, _, _| 9.0),
            ("1-2-3", |_, _, _| -4.0), // left-associative
            ("12/4/3", |_, _, _| 1.0),
            ("sin(x)", |_, x, _| x.sin()),
            ("cos(x)", |_, x, _| x.cos()),
            ("exp(x)", |_, x, _| x.exp()),
            ("abs(-x)", |_, x, _| x.abs()),
            ("min(x,y)", |_, x, y| x.min(y)),
            ("max(x,y)", |_, x, y| x.max(y)),
            ("min(1, max(0, x))", |_, x, _| x.clamp(0.0, 1.0)),
            ("sin(pi*x)", |_, x, _| (PI * x).sin()),
            ("sin(pi*x)*sin(pi*y)", |_, x, y| (PI * x).sin() * (PI * y).sin()),
            ("exp(-pi^2*t)*sin(pi*x)", |t, x, _| (-PI * PI * t).exp() * (PI * x).sin()),
            ("cos(2*pi*(x-t))", |t, x, _| (2.0 * PI * (x - t)).cos()),
            ("exp(-8*(x-0.7)^2)", |_, x, _| (-8.0 * (x - 0.7) * (x - 0.7)).exp()),
            ("1/(1+x^2)", |_, x, _| 1.0 / (1.0 + x * x)),
            ("x*y - y^2/2", |_, x, y| x * y - y * y / 2.0),
            ("abs(x-y)", |_, x, y| (x - y).abs()),
            ("-(x+y)", |_, x, y| -(x + y)),
            ("--x", |_, x, _| x),
            ("2*-3", |_, _, _| -6.0),
            ("e^x", |_, x, _| E.powf(x)),
            ("max(0, 1 - abs(2*x - 1))", |_, x, _| (1.0 - (2.0 * x - 1.0).abs()).max(0.0)),
            ("sin(cos(exp(x)))", |_, x, _| x.exp().cos().sin()),
            ("0.3*x - 0.1*y", |_, x, y| 0.3 * x - 0.1 * y),
            ("(x - 3)^2 + (y - 2)^2", |_, x, y| (x - 3.0).powi(2) + (y - 2.0).powi(2)),
            ("t^2*x + t*y + 1", |t, x, y| t * t * x + t * y + 1.0),
            ("min(exp(t), 2) * max(x, y/2)", |t, x, y| t.exp().min(2.0) * x.max(y / 2.0)),
        ]
    }

    #[test]
    fn matches_reference_interpreter_on_the_table() {
        let table = reference_table();
        assert_eq!(table.len(), 50);
        let points = [
            (0.0, 0.0, 0.0),
            (0.1, 0.3, 0.7),
            (1.0, -0.5, 2.0),
            (0.25, 0.9, -1.3),
            (2.0, 5.0, 0.01),
        ];
        for (src, reference) in table {
            let expr = Expr::parse(src).unwrap_or_else(|e| panic!("parsing '{src}': {e}"));
            for &(t, x, y) in &points {
                let got = expr.eval(t, x, y);
                let want = reference(t, x, y);
                let tol = 1e-15 * (1.0 + want.abs());
                assert!(
                    (got - want).abs() <= tol || (got.is_nan() && want.is_nan()),
                    "'{src}' at (t,x,y)=({t},{x},{y}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in ["", "1+", "(1", "sin()", "min(1)", "foo(2)", "1 2", "x ** 2", "..", "z"] {
            assert!(Expr::parse(bad).is_err(), "'{bad}' should not parse");
        }
    }

    #[test]
    fn variable_usage_is_detected() {
        let e = Expr::parse("sin(pi*x) + t").unwrap();
        assert!(e.uses(Var::T));
        assert!(e.uses(Var::X));
        assert!(!e.uses(Var::Y));
        let c = Expr::parse("pi*e").unwrap();
        assert!(!c.uses(Var::T) && !c.uses(Var::X) && !c.uses(Var::Y));
    }
}
