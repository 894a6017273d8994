//! Event-condition sub-language.
//!
//! ```text
//! condition := conj { OR conj }
//! conj      := atom { AND atom }
//! atom      := "(" condition ")" | term
//! term      := [ "@exist" | "@change" | "@incr" | "@decr" ] "[" resource "]" [capability] cmp literal [unit]
//! cmp       := "==" | "!=" | "<" | "<=" | ">" | ">=" | "="      ("=" is read as "==")
//! literal   := number | true | false | string
//! ```
//!
//! `AND`/`OR` and boolean literals are case-insensitive. A unit after a number
//! (`25° C`, `25C`, `40 %`) is discarded.

use std::fmt;

use serde::Serialize;

use super::cursor::Cursor;
use super::{quote, DslError, MAX_NESTING};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TermKind {
    Evaluator,
    Exist,
    Change,
    Incr,
    Decr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    /// Applies the comparator. Numbers and strings are ordered; booleans and
    /// mixed types only support equality, and ordering them yields false.
    pub fn apply(self, lhs: &Scalar, rhs: &Scalar) -> bool {
        use std::cmp::Ordering;
        let ord = match (lhs, rhs) {
            (Scalar::Number(a), Scalar::Number(b)) => a.partial_cmp(b),
            (Scalar::Text(a), Scalar::Text(b)) => Some(a.cmp(b)),
            (Scalar::Bool(a), Scalar::Bool(b)) if a == b => Some(Ordering::Equal),
            _ => None,
        };
        match self {
            Comparator::Eq => ord == Some(Ordering::Equal),
            Comparator::Ne => {
                ord != Some(Ordering::Equal) && lhs.scalar_type() == rhs.scalar_type()
                    || lhs.scalar_type() != rhs.scalar_type()
            }
            Comparator::Lt => ord == Some(Ordering::Less) && !matches!(lhs, Scalar::Bool(_)),
            Comparator::Le => {
                matches!(ord, Some(Ordering::Less | Ordering::Equal)) && !matches!(lhs, Scalar::Bool(_))
            }
            Comparator::Gt => ord == Some(Ordering::Greater) && !matches!(lhs, Scalar::Bool(_)),
            Comparator::Ge => {
                matches!(ord, Some(Ordering::Greater | Ordering::Equal)) && !matches!(lhs, Scalar::Bool(_))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionTerm {
    pub kind: TermKind,
    pub resource: String,
    pub capability: Option<String>,
    pub comparator: Comparator,
    pub literal: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ConditionExpr {
    Term(ConditionTerm),
    And(Box<ConditionExpr>, Box<ConditionExpr>),
    Or(Box<ConditionExpr>, Box<ConditionExpr>),
}

impl ConditionExpr {
    pub fn and(a: ConditionExpr, b: ConditionExpr) -> Self {
        ConditionExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: ConditionExpr, b: ConditionExpr) -> Self {
        ConditionExpr::Or(Box::new(a), Box::new(b))
    }

    /// Leaves in left-to-right order.
    pub fn terms(&self) -> Vec<&ConditionTerm> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            match e {
                ConditionExpr::Term(t) => out.push(t),
                ConditionExpr::And(a, b) | ConditionExpr::Or(a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Term(TermKind),
    Resource(String),
    Word(String),
    Cmp(Comparator),
    Number(f64),
    Str(String),
    And,
    Or,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Term(k) => format!("{k:?} marker"),
            Tok::Resource(r) => format!("'[{r}]'"),
            Tok::Word(w) => format!("'{w}'"),
            Tok::Cmp(c) => format!("'{}'", c.symbol()),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(_) => "string".into(),
            Tok::And => "AND".into(),
            Tok::Or => "OR".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of condition".into(),
        }
    }
}

struct Token {
    tok: Tok,
    line: u32,
    column: u32,
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<Token>, DslError> {
    let mut cur = Cursor::new(text);
    let mut out: Vec<Token> = Vec::new();
    loop {
        cur.eat_while(char::is_whitespace);
        let (line, column) = (cur.line(), cur.column());
        let Some(c) = cur.peek() else {
            out.push(Token { tok: Tok::End, line, column });
            return Ok(out);
        };
        let tok = match c {
            '(' => {
                cur.bump();
                Tok::LParen
            }
            ')' => {
                cur.bump();
                Tok::RParen
            }
            '@' => {
                cur.bump();
                let word = cur.eat_while(is_word);
                match word.to_ascii_lowercase().as_str() {
                    "exist" => Tok::Term(TermKind::Exist),
                    "change" => Tok::Term(TermKind::Change),
                    "incr" => Tok::Term(TermKind::Incr),
                    "decr" => Tok::Term(TermKind::Decr),
                    _ => {
                        return Err(DslError::source(
                            line,
                            column,
                            format!("unknown condition kind '@{word}'"),
                            Some("@exist, @change, @incr or @decr"),
                        ))
                    }
                }
            }
            '[' => {
                cur.bump();
                let id = cur.eat_while(|c| c != ']' && c != '[' && c != '\n');
                if cur.bump() != Some(']') {
                    return Err(DslError::source(line, column, "unterminated resource", Some("']'")));
                }
                let id = id.trim();
                if id.is_empty() {
                    return Err(DslError::source(line, column, "empty resource identifier", Some("resource id")));
                }
                Tok::Resource(id.to_owned())
            }
            '=' | '!' | '<' | '>' | '~' => {
                let op = cur.eat_while(|c| matches!(c, '=' | '!' | '<' | '>' | '~'));
                let cmp = match op.as_str() {
                    "==" | "=" => Comparator::Eq,
                    "!=" => Comparator::Ne,
                    "<" => Comparator::Lt,
                    "<=" => Comparator::Le,
                    ">" => Comparator::Gt,
                    ">=" => Comparator::Ge,
                    _ => return Err(DslError::InvalidComparator { line, column, found: op }),
                };
                Tok::Cmp(cmp)
            }
            '"' => Tok::Str(cur.string()?),
            c if c.is_ascii_digit() || (c == '-' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) => {
                let negative = c == '-';
                if negative {
                    cur.bump();
                }
                let n = cur.number()?;
                // unit suffix: a degree sign or percent, then an optional unit word
                cur.eat_while(|c| c == ' ' || c == '\t');
                match cur.peek() {
                    Some('°') => {
                        cur.bump();
                        cur.eat_while(|c| c == ' ' || c == '\t');
                        if !at_keyword(&cur) {
                            cur.eat_while(char::is_alphabetic);
                        }
                    }
                    Some('%') => {
                        cur.bump();
                    }
                    _ => {}
                }
                Tok::Number(if negative { -n } else { n })
            }
            c if is_word(c) => {
                let w = cur.eat_while(is_word);
                match w.to_ascii_lowercase().as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    _ => Tok::Word(w),
                }
            }
            c => return Err(DslError::source(line, column, format!("unexpected character '{c}'"), None)),
        };
        // A free-standing unit word after a number ("25 C", "40 %") is dropped.
        if let (Some(Token { tok: Tok::Number(_), .. }), Tok::Word(w)) = (out.last(), &tok) {
            if w.chars().all(char::is_alphabetic) && !is_bool_word(w) {
                continue;
            }
        }
        out.push(Token { tok, line, column });
    }
}

fn at_keyword(cur: &Cursor) -> bool {
    let word: String = (0..4).map_while(|i| cur.peek_at(i)).take_while(|c| c.is_alphabetic()).collect();
    matches!(word.to_ascii_lowercase().as_str(), "and" | "or")
}

fn is_bool_word(w: &str) -> bool {
    w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false")
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (u32, u32) {
        (self.toks[self.pos].line, self.toks[self.pos].column)
    }

    fn error<T>(&self, expected: &str) -> Result<T, DslError> {
        let (line, column) = self.here();
        Err(DslError::source(
            line,
            column,
            format!("unexpected {}", self.peek().describe()),
            Some(expected),
        ))
    }

    fn or_expr(&mut self) -> Result<ConditionExpr, DslError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            let (line, column) = self.here();
            return Err(DslError::source(line, column, "nesting too deep", None));
        }
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = ConditionExpr::or(lhs, rhs);
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<ConditionExpr, DslError> {
        let mut lhs = self.atom()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.atom()?;
            lhs = ConditionExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<ConditionExpr, DslError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.or_expr()?;
            if *self.peek() != Tok::RParen {
                return self.error("')'");
            }
            self.bump();
            return Ok(inner);
        }
        self.term().map(ConditionExpr::Term)
    }

    fn term(&mut self) -> Result<ConditionTerm, DslError> {
        let kind = match self.peek() {
            Tok::Term(k) => {
                let k = *k;
                self.bump();
                k
            }
            _ => TermKind::Evaluator,
        };
        let resource = match self.peek() {
            Tok::Resource(r) => r.clone(),
            _ => return self.error("'[resource]'"),
        };
        self.bump();
        let capability = match self.peek() {
            Tok::Word(w) if !is_bool_word(w) => {
                let w = w.clone();
                self.bump();
                Some(w)
            }
            _ => None,
        };
        match (kind, &capability) {
            (TermKind::Exist, Some(_)) => {
                self.pos -= 1;
                return self.error("comparator (@exist takes no capability)");
            }
            (TermKind::Exist, None) => {}
            (_, None) => return self.error("capability name"),
            _ => {}
        }
        let (cmp_line, cmp_col) = self.here();
        let comparator = match self.peek() {
            Tok::Cmp(c) => *c,
            _ => return self.error("comparator"),
        };
        self.bump();
        let literal = match self.peek().clone() {
            Tok::Number(n) => Scalar::Number(n),
            Tok::Str(s) => Scalar::Text(s),
            Tok::Word(w) if is_bool_word(&w) => Scalar::Bool(w.eq_ignore_ascii_case("true")),
            _ => return self.error("literal"),
        };
        if kind != TermKind::Evaluator {
            if !matches!(comparator, Comparator::Eq | Comparator::Ne) {
                return Err(DslError::InvalidComparator {
                    line: cmp_line,
                    column: cmp_col,
                    found: comparator.symbol().to_owned(),
                });
            }
            if !matches!(literal, Scalar::Bool(_)) {
                return self.error("true or false");
            }
        }
        self.bump();
        Ok(ConditionTerm {
            kind,
            resource,
            capability,
            comparator,
            literal,
        })
    }
}

/// Parses a condition. `AND` binds tighter than `OR`.
pub fn parse_condition(text: &str) -> Result<ConditionExpr, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::EmptyCondition);
    }
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        depth: 0,
    };
    let expr = p.or_expr()?;
    if *p.peek() != Tok::End {
        return p.error("AND, OR or end of condition");
    }
    Ok(expr)
}

/// Parses a bare capability lookup such as `[SensorA] Temperature`.
pub fn parse_reference(text: &str) -> Result<(String, Option<String>), DslError> {
    if text.trim().is_empty() {
        return Err(DslError::EmptyCondition);
    }
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        depth: 0,
    };
    let resource = match p.bump() {
        Tok::Resource(r) => r,
        _ => {
            p.pos = 0;
            return p.error("'[resource]'");
        }
    };
    let capability = match p.peek() {
        Tok::Word(w) if !is_bool_word(w) => Some(w.clone()),
        _ => None,
    };
    if capability.is_some() {
        p.bump();
    }
    if *p.peek() != Tok::End {
        return p.error("end of reference");
    }
    Ok((resource, capability))
}

fn format_literal(s: &Scalar) -> String {
    match s {
        Scalar::Bool(b) => b.to_string(),
        Scalar::Number(n) if *n < 0.0 => format!("-{}", -n),
        Scalar::Number(n) => n.to_string(),
        Scalar::Text(t) => quote(t),
    }
}

impl fmt::Display for ConditionTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            TermKind::Evaluator => "",
            TermKind::Exist => "@exist",
            TermKind::Change => "@change",
            TermKind::Incr => "@incr",
            TermKind::Decr => "@decr",
        };
        write!(
            f,
            "{prefix}[{}]{} {} {}",
            self.resource,
            self.capability.as_deref().unwrap_or(""),
            self.comparator.symbol(),
            format_literal(&self.literal)
        )
    }
}

impl fmt::Display for ConditionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |f: &mut fmt::Formatter<'_>, e: &ConditionExpr| match e {
            ConditionExpr::Term(t) => write!(f, "{t}"),
            _ => write!(f, "({e})"),
        };
        match self {
            ConditionExpr::Term(t) => write!(f, "{t}"),
            ConditionExpr::And(a, b) => {
                side(f, a)?;
                f.write_str(" AND ")?;
                side(f, b)
            }
            ConditionExpr::Or(a, b) => {
                side(f, a)?;
                f.write_str(" OR ")?;
                side(f, b)
            }
        }
    }
}

/// Canonical text of a condition; nested operators are always parenthesised.
pub fn format_condition(expr: &ConditionExpr) -> String {
    expr.to_string()
}
