//! Boolean predicates over a single data row, used to select contexts.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = or ;
//! or      = and , { "or" , and } ;
//! and     = unary , { "and" , unary } ;
//! unary   = "not" , unary | atom ;
//! atom    = "(" , expr , ")" | "true" | "false" | comparison ;
//! comparison = ident , op , number ;
//! op      = "==" | "!=" | "<" | "<=" | ">" | ">=" ;
//! ```
//!
//! Identifiers are variable names; numbers are decimal literals. The common
//! case is `var == 0` / `var == 1` over binary frame features, but ordered
//! comparisons are accepted so contexts like `Age > 25` can be expressed.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Result, TsceError};

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    True,
    False,
    Cmp { var: String, op: CmpOp, value: f64 },
    Not(Box<Predicate>),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::True => write!(f, "true"),
            Predicate::False => write!(f, "false"),
            Predicate::Cmp { var, op, value } => write!(f, "{var} {op} {value}"),
            Predicate::Not(p) => write!(f, "not ({p})"),
            Predicate::And(a, b) => write!(f, "({a}) and ({b})"),
            Predicate::Or(a, b) => write!(f, "({a}) or ({b})"),
        }
    }
}

impl Predicate {
    pub fn parse(input: &str) -> Result<Self> {
        let tokens = tokenize(input)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(TsceError::PredicateParse(format!(
                "trailing input after expression in {input:?}"
            )));
        }
        Ok(expr)
    }

    /// Evaluates against a row of variable values. Every variable referenced
    /// by the predicate must be present.
    pub fn eval(&self, row: &HashMap<String, f64>) -> Result<bool> {
        match self {
            Predicate::True => Ok(true),
            Predicate::False => Ok(false),
            Predicate::Cmp { var, op, value } => {
                let x = *row
                    .get(var)
                    .ok_or_else(|| TsceError::VariableNotFound(var.clone()))?;
                Ok(match op {
                    CmpOp::Eq => x == *value,
                    CmpOp::Ne => x != *value,
                    CmpOp::Lt => x < *value,
                    CmpOp::Le => x <= *value,
                    CmpOp::Gt => x > *value,
                    CmpOp::Ge => x >= *value,
                })
            }
            Predicate::Not(p) => Ok(!p.eval(row)?),
            Predicate::And(a, b) => Ok(a.eval(row)? && b.eval(row)?),
            Predicate::Or(a, b) => Ok(a.eval(row)? || b.eval(row)?),
        }
    }

    /// Variable names the predicate reads.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Predicate::True | Predicate::False => {}
            Predicate::Cmp { var, .. } => out.push(var.clone()),
            Predicate::Not(p) => p.collect_vars(out),
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Op(CmpOp),
    LParen,
    RParen,
    And,
    Or,
    Not,
    True,
    False,
}

fn tokenize(input: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = input.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            tokens.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            tokens.push(Token::RParen);
            i += 1;
        } else if c == '=' || c == '!' || c == '<' || c == '>' {
            let next_eq = chars.get(i + 1) == Some(&'=');
            let op = match (c, next_eq) {
                ('=', true) => CmpOp::Eq,
                ('!', true) => CmpOp::Ne,
                ('<', true) => CmpOp::Le,
                ('>', true) => CmpOp::Ge,
                ('<', false) => CmpOp::Lt,
                ('>', false) => CmpOp::Gt,
                _ => {
                    return Err(TsceError::PredicateParse(format!(
                        "unexpected character {c:?} at offset {i}"
                    )))
                }
            };
            i += if next_eq { 2 } else { 1 };
            tokens.push(Token::Op(op));
        } else if c.is_ascii_digit() || c == '-' || c == '.' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let num = text.parse::<f64>().map_err(|_| {
                TsceError::PredicateParse(format!("bad number literal {text:?}"))
            })?;
            tokens.push(Token::Number(num));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            tokens.push(match word.as_str() {
                "and" => Token::And,
                "or" => Token::Or,
                "not" => Token::Not,
                "true" => Token::True,
                "false" => Token::False,
                _ => Token::Ident(word),
            });
        } else {
            return Err(TsceError::PredicateParse(format!(
                "unexpected character {c:?} at offset {i}"
            )));
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Result<Predicate> {
        let mut left = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let right = self.and()?;
            left = Predicate::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<Predicate> {
        let mut left = self.unary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let right = self.unary()?;
            left = Predicate::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Predicate> {
        if self.peek() == Some(&Token::Not) {
            self.pos += 1;
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Predicate> {
        match self.peek().cloned() {
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(TsceError::PredicateParse("missing ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Token::True) => {
                self.pos += 1;
                Ok(Predicate::True)
            }
            Some(Token::False) => {
                self.pos += 1;
                Ok(Predicate::False)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                let op = match self.peek() {
                    Some(Token::Op(op)) => *op,
                    _ => {
                        return Err(TsceError::PredicateParse(format!(
                            "expected comparison operator after {name:?}"
                        )))
                    }
                };
                self.pos += 1;
                let value = match self.peek() {
                    Some(Token::Number(v)) => *v,
                    _ => {
                        return Err(TsceError::PredicateParse(format!(
                            "expected number after {name} {op}"
                        )))
                    }
                };
                self.pos += 1;
                Ok(Predicate::Cmp {
                    var: name,
                    op,
                    value,
                })
            }
            other => Err(TsceError::PredicateParse(format!(
                "unexpected token {other:?}"
            ))),
        }
    }
}
