//! Filter expression strings such as `datum.Age <= 30 && datum.Region == 'N'`.
//!
//! Only conjunctions of single comparisons between a field and a literal are
//! accepted. Anything else is reported as unparseable rather than guessed at.

use super::model::merge_conjunction;
use super::SpecError;
use crate::tabular::{FieldRef, Interval, Predicate, Scalar};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Str(String),
    Num(f64),
    Op(&'static str),
    And,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
}

fn tokenize(input: &str) -> Result<Vec<Token>, String> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '[' => {
                out.push(Token::LBracket);
                i += 1;
            }
            ']' => {
                out.push(Token::RBracket);
                i += 1;
            }
            '&' if chars.get(i + 1) == Some(&'&') => {
                out.push(Token::And);
                i += 2;
            }
            '=' | '!' | '<' | '>' => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let op = ["===", "!==", "==", "!=", "<=", ">=", "<", ">"]
                    .into_iter()
                    .find(|op| rest.starts_with(op))
                    .ok_or_else(|| format!("unexpected `{c}`"))?;
                out.push(Token::Op(op));
                i += op.len();
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err("unterminated string literal".into()),
                        Some('\\') => {
                            if let Some(n) = chars.get(i + 1) {
                                s.push(*n);
                            }
                            i += 2;
                        }
                        Some(ch) if *ch == quote => {
                            i += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token::Str(s));
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.')) || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || ((chars[i] == '-' || chars[i] == '+') && matches!(chars[i - 1], 'e' | 'E'))) {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n: f64 = text.parse().map_err(|_| format!("bad number `{text}`"))?;
                out.push(Token::Num(n));
            }
            '.' => {
                out.push(Token::Dot);
                i += 1;
            }
            c if c.is_alphabetic() || c == '_' || c == '$' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected `{other}`")),
        }
    }
    Ok(out)
}

enum Operand {
    Field(FieldRef),
    Literal(Scalar),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
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

    fn conjunction(&mut self) -> Result<Vec<Predicate>, String> {
        let mut parts = self.clause()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            parts.extend(self.clause()?);
        }
        Ok(parts)
    }

    fn clause(&mut self) -> Result<Vec<Predicate>, String> {
        if self.peek() == Some(&Token::LParen) {
            self.pos += 1;
            let inner = self.conjunction()?;
            if self.next() != Some(Token::RParen) {
                return Err("missing `)`".into());
            }
            return Ok(inner);
        }
        let left = self.operand()?;
        let op = match self.next() {
            Some(Token::Op(op)) => op,
            other => return Err(format!("expected comparison operator, found {other:?}")),
        };
        let right = self.operand()?;
        let (field, op, literal) = match (left, right) {
            (Operand::Field(f), Operand::Literal(v)) => (f, op, v),
            (Operand::Literal(v), Operand::Field(f)) => (f, mirror(op), v),
            _ => return Err("a comparison needs one field and one literal".into()),
        };
        Ok(vec![comparison(field, op, literal)?])
    }

    fn operand(&mut self) -> Result<Operand, String> {
        match self.next() {
            Some(Token::Num(n)) => Ok(Operand::Literal(Scalar::Number(n))),
            Some(Token::Str(s)) => Ok(Operand::Literal(Scalar::Text(s))),
            Some(Token::Ident(id)) if id == "true" || id == "false" => Ok(Operand::Literal(Scalar::Bool(id == "true"))),
            Some(Token::Ident(id)) if id == "datum" => match self.next() {
                Some(Token::Dot) => match self.next() {
                    Some(Token::Ident(f)) => Ok(Operand::Field(FieldRef::from(f))),
                    other => Err(format!("expected field name after `datum.`, found {other:?}")),
                },
                Some(Token::LBracket) => {
                    let f = match self.next() {
                        Some(Token::Str(f)) => f,
                        other => return Err(format!("expected quoted field name, found {other:?}")),
                    };
                    if self.next() != Some(Token::RBracket) {
                        return Err("missing `]`".into());
                    }
                    Ok(Operand::Field(FieldRef::from(f)))
                }
                other => Err(format!("unexpected {other:?} after `datum`")),
            },
            Some(Token::Ident(id)) => Ok(Operand::Field(FieldRef::from(id))),
            other => Err(format!("expected operand, found {other:?}")),
        }
    }
}

fn mirror(op: &'static str) -> &'static str {
    match op {
        "<" => ">",
        ">" => "<",
        "<=" => ">=",
        ">=" => "<=",
        other => other,
    }
}

fn comparison(field: FieldRef, op: &str, literal: Scalar) -> Result<Predicate, String> {
    if matches!(op, "==" | "===") {
        return Ok(Predicate::Equals { field, value: literal });
    }
    if matches!(op, "!=" | "!==") {
        return Err("inequality filters are not supported".into());
    }
    let Scalar::Number(v) = literal else {
        return Err(format!("`{op}` needs a numeric literal"));
    };
    let iv = match op {
        "<" => Interval::less_than(v),
        "<=" => Interval::at_most(v),
        ">" => Interval::greater_than(v),
        ">=" => Interval::at_least(v),
        _ => unreachable!("tokenizer only yields known operators"),
    };
    Ok(Predicate::range(field, iv))
}

/// Parses a filter expression into a predicate. Multiple clauses become a
/// conjunction with same-field ranges merged.
pub fn parse_filter_expression(expr: &str) -> Result<Predicate, SpecError> {
    let fail = |msg: String| SpecError::UnparseableFilter(format!("`{expr}`: {msg}"));
    let tokens = tokenize(expr).map_err(fail)?;
    if tokens.is_empty() {
        return Err(fail("empty expression".into()));
    }
    let mut parser = Parser { tokens, pos: 0 };
    let parts = parser.conjunction().map_err(fail)?;
    if parser.pos < parser.tokens.len() {
        return Err(fail(format!("trailing input at token {}", parser.pos)));
    }
    Ok(merge_conjunction(parts))
}
