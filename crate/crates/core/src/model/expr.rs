//! Arithmetic expressions over the state `x` and input `u`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' integer)?
//! atom   := number | 'x' | 'u' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`. Exponents are
//! nonnegative integer literals.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Number(f64),
    State,
    Input,
    Neg(Box<Expression>),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnbalancedParenthesis,
    UnknownIdentifier(String),
    EmptyOperand,
    UnexpectedCharacter(char),
    InvalidNumber(String),
    InvalidExponent,
    TrailingInput,
}

/// Syntax error with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at position {position}: {kind}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Empty => write!(f, "empty expression"),
            ParseErrorKind::UnbalancedParenthesis => write!(f, "unbalanced parenthesis"),
            ParseErrorKind::UnknownIdentifier(name) => write!(f, "unknown identifier `{name}`"),
            ParseErrorKind::EmptyOperand => write!(f, "missing operand"),
            ParseErrorKind::UnexpectedCharacter(c) => write!(f, "unexpected character `{c}`"),
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number `{s}`"),
            ParseErrorKind::InvalidExponent => {
                write!(f, "exponent must be a nonnegative integer literal")
            }
            ParseErrorKind::TrailingInput => write!(f, "unexpected trailing input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => tokens.push((start, Token::Plus)),
            '-' => tokens.push((start, Token::Minus)),
            '*' => tokens.push((start, Token::Star)),
            '/' => tokens.push((start, Token::Slash)),
            '^' => tokens.push((start, Token::Caret)),
            '(' => tokens.push((start, Token::LParen)),
            ')' => tokens.push((start, Token::RParen)),
            '0'..='9' | '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // Scientific notation: 1e-3, 2.5E+4.
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
                let literal = &text[start..i];
                let value: f64 = literal.parse().map_err(|_| ParseError {
                    position: start,
                    kind: ParseErrorKind::InvalidNumber(literal.to_string()),
                })?;
                if !value.is_finite() {
                    return Err(ParseError {
                        position: start,
                        kind: ParseErrorKind::InvalidNumber(literal.to_string()),
                    });
                }
                tokens.push((start, Token::Number(value, literal.to_string())));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((start, Token::Ident(text[start..i].to_string())));
                continue;
            }
            other => {
                return Err(ParseError {
                    position: start,
                    kind: ParseErrorKind::UnexpectedCharacter(other),
                })
            }
        }
        i += 1;
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            position: self.offset(),
            kind,
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expression::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expression::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expression::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expression::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if let Some(Token::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Expression::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression, ParseError> {
        let base = self.atom()?;
        if let Some(Token::Caret) = self.peek() {
            self.pos += 1;
            return match self.peek().cloned() {
                Some(Token::Number(value, literal))
                    if literal.bytes().all(|b| b.is_ascii_digit()) && value <= u32::MAX as f64 =>
                {
                    self.pos += 1;
                    Ok(Expression::Pow(Box::new(base), value as u32))
                }
                None => Err(self.error(ParseErrorKind::EmptyOperand)),
                _ => Err(self.error(ParseErrorKind::InvalidExponent)),
            };
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        let position = self.offset();
        match self.peek().cloned() {
            Some(Token::Number(value, _)) => {
                self.pos += 1;
                Ok(Expression::Number(value))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(Expression::State),
                    "u" => Ok(Expression::Input),
                    _ => Err(ParseError {
                        position,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    }),
                }
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    None => Err(ParseError {
                        position,
                        kind: ParseErrorKind::UnbalancedParenthesis,
                    }),
                    Some(_) => Err(self.error(ParseErrorKind::TrailingInput)),
                }
            }
            Some(Token::RParen) => Err(self.error(ParseErrorKind::EmptyOperand)),
            Some(_) | None => Err(self.error(ParseErrorKind::EmptyOperand)),
        }
    }
}

/// Parses `text` into an expression tree.
pub fn parse_expression(text: &str) -> Result<Expression, ParseError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError {
            position: 0,
            kind: ParseErrorKind::Empty,
        });
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let tree = parser.expr()?;
    match parser.peek() {
        None => Ok(tree),
        Some(Token::RParen) => Err(parser.error(ParseErrorKind::UnbalancedParenthesis)),
        Some(_) => Err(parser.error(ParseErrorKind::TrailingInput)),
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expression(s)
    }
}

impl Expression {
    /// Evaluates at `(x, u)`. Division by zero yields a non-finite value.
    pub fn eval(&self, x: f64, u: f64) -> f64 {
        match self {
            Expression::Number(v) => *v,
            Expression::State => x,
            Expression::Input => u,
            Expression::Neg(a) => -a.eval(x, u),
            Expression::Add(a, b) => a.eval(x, u) + b.eval(x, u),
            Expression::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
            Expression::Mul(a, b) => a.eval(x, u) * b.eval(x, u),
            Expression::Div(a, b) => a.eval(x, u) / b.eval(x, u),
            Expression::Pow(a, n) => pow(a.eval(x, u), *n),
        }
    }
}

fn pow(base: f64, exponent: u32) -> f64 {
    match i32::try_from(exponent) {
        Ok(e) => base.powi(e),
        Err(_) => base.powf(exponent as f64),
    }
}

/// Fully parenthesized, so printing then parsing reproduces the tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Number(v) => write!(f, "{v}"),
            Expression::State => write!(f, "x"),
            Expression::Input => write!(f, "u"),
            Expression::Neg(a) => write!(f, "-({a})"),
            Expression::Add(a, b) => write!(f, "({a} + {b})"),
            Expression::Sub(a, b) => write!(f, "({a} - {b})"),
            Expression::Mul(a, b) => write!(f, "({a} * {b})"),
            Expression::Div(a, b) => write!(f, "({a} / {b})"),
            Expression::Pow(a, n) => write!(f, "({a})^{n}"),
        }
    }
}
