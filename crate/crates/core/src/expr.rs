//! Scalar expression trees over `x`, `y`, `z`.
//!
//! Grammar (standard precedence, `^` binds tighter than unary minus, which
//! binds tighter than `*` and `/`):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | '+' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! Identifiers are the variables `x`, `y`, `z`, the constants `pi` and `e`,
//! or caller-supplied named parameters, which are folded to constants.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One-argument functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    /// Always non-negative; negative literals are `Neg(Const)`.
    Const(f64),
    /// 0, 1, 2 for x, y, z.
    Var(u8),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Expr),
    Neg(Expr),
    Call(Func, Expr),
    Atan2(Expr, Expr),
}

/// Immutable, cheaply clonable expression node. Shared subtrees are kept
/// shared, so compositional builders do not blow up in size.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl Expr {
    fn new(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn constant(c: f64) -> Self {
        if c.is_sign_negative() && c != 0.0 {
            Self::new(Node::Neg(Self::new(Node::Const(-c))))
        } else {
            Self::new(Node::Const(c.abs()))
        }
    }

    pub fn var(index: u8) -> Self {
        assert!(index < 3, "variable index out of range");
        Self::new(Node::Var(index))
    }

    pub fn x() -> Self {
        Self::var(0)
    }

    pub fn y() -> Self {
        Self::var(1)
    }

    pub fn z() -> Self {
        Self::var(2)
    }

    pub fn pow(&self, e: &Expr) -> Self {
        Self::new(Node::Pow(self.clone(), e.clone()))
    }

    pub fn powi(&self, n: i32) -> Self {
        self.pow(&Expr::constant(n as f64))
    }

    pub fn call(f: Func, arg: &Expr) -> Self {
        Self::new(Node::Call(f, arg.clone()))
    }

    pub fn sin(&self) -> Self {
        Self::call(Func::Sin, self)
    }

    pub fn cos(&self) -> Self {
        Self::call(Func::Cos, self)
    }

    pub fn exp(&self) -> Self {
        Self::call(Func::Exp, self)
    }

    pub fn sqrt(&self) -> Self {
        Self::call(Func::Sqrt, self)
    }

    pub fn atan2(&self, x: &Expr) -> Self {
        Self::new(Node::Atan2(self.clone(), x.clone()))
    }

    /// Parse with no named parameters.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &HashMap::new())
    }

    /// Parse, binding identifiers in `params` to constants.
    pub fn parse_with(text: &str, params: &HashMap<String, f64>) -> Result<Self> {
        let tokens = lex(text)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            params,
            end: text.len(),
        };
        let e = p.expr(0)?;
        if let Some(t) = p.peek() {
            return Err(Error::Syntax {
                offset: t.offset,
                message: format!("unexpected {}", t.kind.describe()),
            });
        }
        Ok(e)
    }

    /// Evaluate at a point. Intended for tests and one-off checks; hot paths
    /// should compile a [`crate::field::Tape`].
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self.node() {
            Node::Const(c) => *c,
            Node::Var(i) => p[*i as usize],
            Node::Add(a, b) => a.eval(p) + b.eval(p),
            Node::Sub(a, b) => a.eval(p) - b.eval(p),
            Node::Mul(a, b) => a.eval(p) * b.eval(p),
            Node::Div(a, b) => a.eval(p) / b.eval(p),
            Node::Pow(a, b) => a.eval(p).powf(b.eval(p)),
            Node::Neg(a) => -a.eval(p),
            Node::Call(f, a) => {
                let v = a.eval(p);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                }
            }
            Node::Atan2(a, b) => a.eval(p).atan2(b.eval(p)),
        }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $node:ident) => {
        impl std::ops::$tr for Expr {
            type Output = Expr;
            fn $m(self, o: Expr) -> Expr {
                Expr::new(Node::$node(self, o))
            }
        }
        impl std::ops::$tr for &Expr {
            type Output = Expr;
            fn $m(self, o: &Expr) -> Expr {
                Expr::new(Node::$node(self.clone(), o.clone()))
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self))
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self.clone()))
    }
}

struct Wrap<'a>(&'a Expr, bool);

impl fmt::Display for Wrap<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    /// Prints with the fewest parentheses that parse back to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "{}", ["x", "y", "z"][*i as usize]),
            Node::Add(a, b) => write!(f, "{} + {}", a, Wrap(b, b.precedence() <= 1)),
            Node::Sub(a, b) => write!(f, "{} - {}", a, Wrap(b, b.precedence() <= 1)),
            Node::Mul(a, b) => write!(
                f,
                "{}*{}",
                Wrap(a, a.precedence() < 2),
                Wrap(b, b.precedence() <= 2)
            ),
            Node::Div(a, b) => write!(
                f,
                "{}/{}",
                Wrap(a, a.precedence() < 2),
                Wrap(b, b.precedence() <= 2)
            ),
            Node::Neg(a) => write!(f, "-{}", Wrap(a, a.precedence() < 3)),
            Node::Pow(a, b) => write!(
                f,
                "{}^{}",
                Wrap(a, a.precedence() < 5),
                Wrap(b, b.precedence() < 3)
            ),
            Node::Call(func, a) => write!(f, "{}({})", func.name(), a),
            Node::Atan2(a, b) => write!(f, "atan2({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("`{c}`"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
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
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push(Token {
                kind: TokenKind::Num(v),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(text[start..i].to_string()),
                offset: start,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token {
                kind: TokenKind::Op(c),
                offset: i,
            });
            i += 1;
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(Error::Syntax {
                offset: i,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    params: &'a HashMap<String, f64>,
    end: usize,
}

const UNARY_BP: u8 = 5;

fn infix_bp(op: char) -> Option<(u8, u8)> {
    match op {
        '+' | '-' => Some((1, 2)),
        '*' | '/' => Some((3, 4)),
        '^' => Some((7, 6)),
        _ => None,
    }
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn expect(&mut self, op: char) -> Result<()> {
        match self.next() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) if c == op => Ok(()),
            Some(t) => Err(Error::Syntax {
                offset: t.offset,
                message: format!("expected `{op}`, found {}", t.kind.describe()),
            }),
            None => Err(Error::Syntax {
                offset: self.end,
                message: format!("expected `{op}`, found end of input"),
            }),
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.peek() {
                Some(Token {
                    kind: TokenKind::Op(c),
                    ..
                }) => *c,
                _ => break,
            };
            let Some((lbp, rbp)) = infix_bp(op) else {
                break;
            };
            if lbp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(rbp)?;
            lhs = Expr::new(match op {
                '+' => Node::Add(lhs, rhs),
                '-' => Node::Sub(lhs, rhs),
                '*' => Node::Mul(lhs, rhs),
                '/' => Node::Div(lhs, rhs),
                _ => Node::Pow(lhs, rhs),
            });
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr> {
        let offset = self.offset();
        let Some(tok) = self.next() else {
            return Err(Error::Syntax {
                offset,
                message: "unexpected end of input".into(),
            });
        };
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::new(Node::Const(v))),
            TokenKind::Op('-') => Ok(-self.expr(UNARY_BP)?),
            TokenKind::Op('+') => self.expr(UNARY_BP),
            TokenKind::Op('(') => {
                let e = self.expr(0)?;
                self.expect(')')?;
                Ok(e)
            }
            TokenKind::Ident(name) => self.identifier(name, tok.offset),
            other => Err(Error::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn identifier(&mut self, name: String, offset: usize) -> Result<Expr> {
        let is_call = matches!(
            self.peek(),
            Some(Token {
                kind: TokenKind::Op('('),
                ..
            })
        );
        if is_call {
            self.pos += 1;
            let mut args = Vec::new();
            if !matches!(
                self.peek(),
                Some(Token {
                    kind: TokenKind::Op(')'),
                    ..
                })
            ) {
                loop {
                    args.push(self.expr(0)?);
                    match self.peek() {
                        Some(Token {
                            kind: TokenKind::Op(','),
                            ..
                        }) => self.pos += 1,
                        _ => break,
                    }
                }
            }
            self.expect(')')?;
            let (expected, build): (usize, Box<dyn Fn(Vec<Expr>) -> Expr>) =
                if name == "atan2" {
                    (2, Box::new(|a| a[0].atan2(&a[1])))
                } else if let Some(f) = Func::from_name(&name) {
                    (1, Box::new(move |a| Expr::call(f, &a[0])))
                } else {
                    return Err(Error::UnknownIdentifier { name, offset });
                };
            if args.len() != expected {
                return Err(Error::Arity {
                    name,
                    expected,
                    found: args.len(),
                    offset,
                });
            }
            return Ok(build(args));
        }
        match name.as_str() {
            "x" => Ok(Expr::x()),
            "y" => Ok(Expr::y()),
            "z" => Ok(Expr::z()),
            _ => {
                if let Some(v) = self.params.get(&name) {
                    Ok(Expr::constant(*v))
                } else if name == "pi" {
                    Ok(Expr::constant(std::f64::consts::PI))
                } else if name == "e" {
                    Ok(Expr::constant(std::f64::consts::E))
                } else {
                    Err(Error::UnknownIdentifier { name, offset })
                }
            }
        }
    }
}
