//! Arithmetic over path coordinates: `+ - * / ^`, `max`, `min`, `abs`,
//! `call(x, k) = max(x - k, 0)`, numbers and variables `x<t>` (asset 0),
//! `x<t>_<j>` or, in option payoffs, `x` (the coordinate at the option's date).

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    /// Byte offset into the expression.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.message, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Var {
    /// `x<t>_<j>`.
    Coord { t: usize, j: usize },
    /// `x`, bound by the caller.
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Max(Vec<Expr>),
    Min(Vec<Expr>),
    Abs(Box<Expr>),
    Call(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, var: &dyn Fn(Var) -> f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => var(*v),
            Expr::Neg(e) => -e.eval(var),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(var), b.eval(var));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Expr::Max(args) => args.iter().map(|e| e.eval(var)).fold(f64::NEG_INFINITY, f64::max),
            Expr::Min(args) => args.iter().map(|e| e.eval(var)).fold(f64::INFINITY, f64::min),
            Expr::Abs(e) => e.eval(var).abs(),
            Expr::Call(x, k) => (x.eval(var) - k.eval(var)).max(0.0),
        }
    }

    pub fn visit_vars(&self, f: &mut dyn FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(e) | Expr::Abs(e) => e.visit_vars(f),
            Expr::Bin(_, a, b) | Expr::Call(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Max(args) | Expr::Min(args) => args.iter().for_each(|e| e.visit_vars(f)),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError {
            offset: self.pos,
            message: msg.to_string(),
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

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(c as char, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(c as char, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            // right associative, binds tighter than unary minus on the left
            return Ok(Expr::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Expr::Num).map_err(|_| ExprError {
            offset: start,
            message: format!("bad number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.err("expected ')' or ','"));
            }
            let arity = |n: usize| -> Result<(), ExprError> {
                if args.len() == n {
                    return Ok(());
                }
                Err(ExprError {
                    offset: start,
                    message: format!("{name} takes {n} argument(s), got {}", args.len()),
                })
            };
            return match name {
                "max" | "min" if args.len() >= 2 => Ok(if name == "max" { Expr::Max(args) } else { Expr::Min(args) }),
                "max" | "min" => Err(ExprError {
                    offset: start,
                    message: format!("{name} needs at least 2 arguments"),
                }),
                "abs" => {
                    arity(1)?;
                    Ok(Expr::Abs(Box::new(args.pop().unwrap())))
                }
                "call" => {
                    arity(2)?;
                    let k = args.pop().unwrap();
                    Ok(Expr::Call(Box::new(args.pop().unwrap()), Box::new(k)))
                }
                _ => Err(ExprError {
                    offset: start,
                    message: format!("unknown function '{name}'"),
                }),
            };
        }
        parse_var(name).map(Expr::Var).ok_or(ExprError {
            offset: start,
            message: format!("unknown variable '{name}'"),
        })
    }
}

fn parse_var(name: &str) -> Option<Var> {
    if name == "x" {
        return Some(Var::Local);
    }
    let rest = name.strip_prefix('x')?;
    let (t, j) = match rest.split_once('_') {
        Some((t, j)) => (t, j),
        None => (rest, "0"),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(t) || !digits(j) {
        return None;
    }
    Some(Var::Coord {
        t: t.parse().ok()?,
        j: j.parse().ok()?,
    })
}
