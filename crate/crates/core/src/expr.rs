//! A small arithmetic language for coefficients and reaction terms.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | variable | pi | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus (`-2^2 == -4`) and is right
//! associative through the `unary` exponent. Variables are `x`, `y` and `u`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` takes {expected} argument(s), got {found} (offset {offset})")]
    Arity {
        name: &'static str,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("unbound variable `{0}`")]
    UnboundVariable(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    U,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::U => "u",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Sin,
    Cos,
    Exp,
    Log,
    Sign,
    Min,
    Max,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sign" => Func::Sign,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            end: source.len(),
        };
        let e = parser.expr()?;
        match parser.peek() {
            None => Ok(e),
            Some(t) => Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("unexpected {}", t.kind),
            }),
        }
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// True when the tree mentions variable `v`.
    pub fn uses(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) => a.uses(v),
            Expr::Binary(_, a, b) => a.uses(v) || b.uses(v),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(v)),
        }
    }

    /// Evaluate with all three variables bound.
    pub fn eval(&self, x: f64, y: f64, u: f64) -> Result<f64, ExprError> {
        self.eval_with(&|v| {
            Ok(match v {
                Var::X => x,
                Var::Y => y,
                Var::U => u,
            })
        })
    }

    /// Evaluate against a name -> value map; missing names are errors.
    pub fn evaluate(&self, bindings: &HashMap<&str, f64>) -> Result<f64, ExprError> {
        self.eval_with(&|v| {
            bindings
                .get(v.name())
                .copied()
                .ok_or(ExprError::UnboundVariable(v.name()))
        })
    }

    fn eval_with(&self, lookup: &dyn Fn(Var) -> Result<f64, ExprError>) -> Result<f64, ExprError> {
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => lookup(*v)?,
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Binary(op, a, b) => {
                let a = a.eval_with(lookup)?;
                let b = b.eval_with(lookup)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::Domain(format!("division of {a} by zero")));
                        }
                        a / b
                    }
                    BinOp::Pow => power(a, b)?,
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval_with(lookup)?;
                match func {
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(ExprError::Domain(format!("log of nonpositive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sign => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Min => a.min(args[1].eval_with(lookup)?),
                    Func::Max => a.max(args[1].eval_with(lookup)?),
                    Func::Pow => power(a, args[1].eval_with(lookup)?)?,
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ExprError::Domain(format!("non-finite result in `{self}`")))
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let wrap = self.precedence() < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Expr::Num(v) if v.is_sign_negative() => {
                f.write_str("-")?;
                Expr::Num(-v).write_at(f, 3)?;
            }
            Expr::Num(v) => write!(f, "{v}")?,
            Expr::Var(v) => f.write_str(v.name())?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_at(f, 3)?;
            }
            Expr::Binary(op, a, b) => {
                let (sym, lmin, rmin) = match op {
                    BinOp::Add => ("+", 1, 2),
                    BinOp::Sub => ("-", 1, 2),
                    BinOp::Mul => ("*", 2, 3),
                    BinOp::Div => ("/", 2, 3),
                    BinOp::Pow => ("^", 5, 3),
                };
                a.write_at(f, lmin)?;
                f.write_str(sym)?;
                b.write_at(f, rmin)?;
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    a.write_at(f, 0)?;
                }
                f.write_str(")")?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

fn power(base: f64, exponent: f64) -> Result<f64, ExprError> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(ExprError::Domain(format!(
            "negative base {base} raised to non-integer power {exponent}"
        )));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(ExprError::Domain(format!("0 raised to negative power {exponent}")));
    }
    Ok(base.powf(exponent))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Num(v) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Op(c) => write!(f, "`{c}`"),
            TokenKind::LParen => f.write_str("`(`"),
            TokenKind::RParen => f.write_str("`)`"),
            TokenKind::Comma => f.write_str("`,`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() || c == '.' {
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
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            TokenKind::Num(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            TokenKind::Ident(src[start..i].to_string())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                ',' => TokenKind::Comma,
                _ => {
                    return Err(ExprError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{}`", src[start..].chars().next().unwrap()),
                    })
                }
            }
        };
        tokens.push(Token { kind, offset: start });
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn unexpected(&self) -> ExprError {
        match self.peek() {
            Some(t) => ExprError::Syntax {
                offset: t.offset,
                message: format!("unexpected {}", t.kind),
            },
            None => ExprError::Syntax {
                offset: self.end,
                message: "unexpected end of input".into(),
            },
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected());
        };
        match tok.kind {
            TokenKind::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Expr::Var(Var::X)),
                    "y" => return Ok(Expr::Var(Var::Y)),
                    "u" => return Ok(Expr::Var(Var::U)),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    _ => {}
                }
                let func = Func::lookup(&name).ok_or(ExprError::UnknownIdentifier {
                    name: name.clone(),
                    offset: tok.offset,
                })?;
                match self.next() {
                    Some(Token {
                        kind: TokenKind::LParen,
                        ..
                    }) => {}
                    _ => {
                        self.pos -= 1;
                        return Err(self.unexpected());
                    }
                }
                let mut args = vec![self.expr()?];
                while matches!(self.peek(), Some(Token { kind: TokenKind::Comma, .. })) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect_rparen()?;
                if args.len() != func.arity() {
                    return Err(ExprError::Arity {
                        name: func.name(),
                        expected: func.arity(),
                        found: args.len(),
                        offset: tok.offset,
                    });
                }
                Ok(Expr::Call(func, args))
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::RParen,
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected()),
        }
    }
}
