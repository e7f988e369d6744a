//! Canonical prefix text form of expression trees.
//!
//! ```text
//! expr  := "(" func expr+ ")"          ; child count must match the arity
//!        | "(" "const" number ")"
//!        | "(" "var" index ")"
//!        | "(" "lcf" index ")"          ; identity weights
//!        | "(" "lcf" index a b1 .. bd ")"
//! func  := add | sub | mul | sin | cos | exp | logsig | tanh | sinc
//!        | softplus | gauss | pow2 | pow3 | pow4 | pow5 | pow6
//! index := one-based feature index, 1..=d
//! ```
//!
//! Tokens are separated by ASCII whitespace or parentheses. Numbers use
//! Rust's `f64` syntax, which includes `inf` and `NaN`; the printer emits the
//! shortest representation that parses back to the same bits.

use std::fmt;
use thiserror::Error;

use super::{FunctionKind, LcfWeights, Node};

/// Nesting limit for parsed input.
pub const MAX_PARSE_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token `{token}` at byte {pos}")]
    Unexpected { token: String, pos: usize },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("bad number `{0}`")]
    BadNumber(String),
    #[error("feature index {index} not in 1..={d}")]
    BadIndex { index: String, d: usize },
    #[error("`{op}` takes {expected} arguments, got {got}")]
    ArgCount {
        op: String,
        expected: String,
        got: usize,
    },
    #[error("nesting deeper than {MAX_PARSE_DEPTH}")]
    TooDeep,
    #[error("trailing input at byte {0}")]
    Trailing(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(v) => write!(f, "(const {v:?})"),
            Node::Var(j) => write!(f, "(var {})", j + 1),
            Node::Lcf { index, weights } => {
                if weights.is_identity_for(*index) {
                    write!(f, "(lcf {})", index + 1)
                } else {
                    write!(f, "(lcf {} {:?}", index + 1, weights.a)?;
                    for w in &weights.b {
                        write!(f, " {w:?}")?;
                    }
                    f.write_str(")")
                }
            }
            Node::Function { kind, children } => {
                write!(f, "({kind}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Option<(Token<'a>, usize)> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        match bytes.get(start)? {
            b'(' => {
                self.pos += 1;
                Some((Token::Open, start))
            }
            b')' => {
                self.pos += 1;
                Some((Token::Close, start))
            }
            _ => {
                while self.pos < bytes.len()
                    && !bytes[self.pos].is_ascii_whitespace()
                    && bytes[self.pos] != b'('
                    && bytes[self.pos] != b')'
                {
                    self.pos += 1;
                }
                Some((Token::Atom(&self.src[start..self.pos]), start))
            }
        }
    }
}

/// Parses one tree for a problem of dimensionality `d`.
pub fn parse_node(src: &str, d: usize) -> Result<Node, ParseError> {
    let mut lexer = Lexer { src, pos: 0 };
    let node = parse_expr(&mut lexer, d, 0)?;
    match lexer.next() {
        None => Ok(node),
        Some((_, pos)) => Err(ParseError::Trailing(pos)),
    }
}

fn unexpected(token: Token<'_>, pos: usize) -> ParseError {
    let token = match token {
        Token::Open => "(".to_string(),
        Token::Close => ")".to_string(),
        Token::Atom(a) => a.to_string(),
    };
    ParseError::Unexpected { token, pos }
}

fn parse_expr(lexer: &mut Lexer<'_>, d: usize, depth: usize) -> Result<Node, ParseError> {
    if depth > MAX_PARSE_DEPTH {
        return Err(ParseError::TooDeep);
    }
    match lexer.next().ok_or(ParseError::UnexpectedEnd)? {
        (Token::Open, _) => {}
        (tok, pos) => return Err(unexpected(tok, pos)),
    }
    let op = match lexer.next().ok_or(ParseError::UnexpectedEnd)? {
        (Token::Atom(a), _) => a,
        (tok, pos) => return Err(unexpected(tok, pos)),
    };
    match op {
        "const" => {
            let atoms = atoms_until_close(lexer)?;
            expect_count(op, "1", atoms.len(), atoms.len() == 1)?;
            Ok(Node::Const(number(atoms[0])?))
        }
        "var" => {
            let atoms = atoms_until_close(lexer)?;
            expect_count(op, "1", atoms.len(), atoms.len() == 1)?;
            Ok(Node::Var(feature_index(atoms[0], d)?))
        }
        "lcf" => {
            let atoms = atoms_until_close(lexer)?;
            let full = 2 + d;
            expect_count(
                op,
                &format!("1 or {full}"),
                atoms.len(),
                atoms.len() == 1 || atoms.len() == full,
            )?;
            let index = feature_index(atoms[0], d)?;
            let weights = if atoms.len() == 1 {
                LcfWeights::identity(index, d)
            } else {
                let flat = atoms[1..]
                    .iter()
                    .map(|a| number(a))
                    .collect::<Result<Vec<_>, _>>()?;
                LcfWeights::from_flat(&flat)
            };
            Ok(Node::Lcf { index, weights })
        }
        name => {
            let kind = FunctionKind::from_name(name)
                .ok_or_else(|| ParseError::UnknownOperator(name.to_string()))?;
            let mut children = Vec::with_capacity(kind.arity());
            loop {
                let save = lexer.pos;
                match lexer.next().ok_or(ParseError::UnexpectedEnd)? {
                    (Token::Close, _) => break,
                    (Token::Open, _) => {
                        lexer.pos = save;
                        children.push(parse_expr(lexer, d, depth + 1)?);
                    }
                    (tok, pos) => return Err(unexpected(tok, pos)),
                }
            }
            expect_count(
                name,
                &kind.arity().to_string(),
                children.len(),
                children.len() == kind.arity(),
            )?;
            Ok(Node::Function { kind, children })
        }
    }
}

fn atoms_until_close<'a>(lexer: &mut Lexer<'a>) -> Result<Vec<&'a str>, ParseError> {
    let mut atoms = Vec::new();
    loop {
        match lexer.next().ok_or(ParseError::UnexpectedEnd)? {
            (Token::Close, _) => return Ok(atoms),
            (Token::Atom(a), _) => atoms.push(a),
            (tok, pos) => return Err(unexpected(tok, pos)),
        }
    }
}

fn expect_count(op: &str, expected: &str, got: usize, ok: bool) -> Result<(), ParseError> {
    if ok {
        Ok(())
    } else {
        Err(ParseError::ArgCount {
            op: op.to_string(),
            expected: expected.to_string(),
            got,
        })
    }
}

fn number(atom: &str) -> Result<f64, ParseError> {
    atom.parse::<f64>()
        .map_err(|_| ParseError::BadNumber(atom.to_string()))
}

fn feature_index(atom: &str, d: usize) -> Result<usize, ParseError> {
    match atom.parse::<usize>() {
        Ok(i) if (1..=d).contains(&i) => Ok(i - 1),
        _ => Err(ParseError::BadIndex {
            index: atom.to_string(),
            d,
        }),
    }
}
