//! Semantic query language.
//!
//! ```text
//! query  := verb [target] filter
//! verb   := search | avg | min | max | sum | count | subscribe   (any case)
//! target := device | variable                                   (any case, default device)
//! filter := and { "or" and }
//! and    := atom { "and" atom }
//! atom   := "(" filter ")" | ["@"] key ":" value
//! ```
//!
//! Keys are lowercased and `loc` is folded onto `location`. Values are bare
//! words or double-quoted strings and keep their case.

use std::fmt;

use serde::Serialize;

use super::QueryError;
use crate::registry::normalize_tag_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Verb {
    Search,
    Avg,
    Min,
    Max,
    Sum,
    Count,
    Subscribe,
}

impl Verb {
    fn parse(word: &str) -> Option<Verb> {
        Some(match word.to_ascii_lowercase().as_str() {
            "search" => Verb::Search,
            "avg" => Verb::Avg,
            "min" => Verb::Min,
            "max" => Verb::Max,
            "sum" => Verb::Sum,
            "count" => Verb::Count,
            "subscribe" => Verb::Subscribe,
            _ => return None,
        })
    }

    pub fn is_aggregate(self) -> bool {
        matches!(self, Verb::Avg | Verb::Min | Verb::Max | Verb::Sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Target {
    Device,
    Variable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterTerm {
    pub inferred: bool,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FilterExpr {
    Term(FilterTerm),
    And(Box<FilterExpr>, Box<FilterExpr>),
    Or(Box<FilterExpr>, Box<FilterExpr>),
}

impl FilterExpr {
    pub fn term(inferred: bool, key: &str, value: &str) -> Self {
        FilterExpr::Term(FilterTerm {
            inferred,
            key: normalize_tag_key(key),
            value: value.to_owned(),
        })
    }

    pub fn and(a: FilterExpr, b: FilterExpr) -> Self {
        FilterExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: FilterExpr, b: FilterExpr) -> Self {
        FilterExpr::Or(Box::new(a), Box::new(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Query {
    pub verb: Verb,
    pub target: Target,
    pub filter: FilterExpr,
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let child = |f: &mut fmt::Formatter<'_>, e: &FilterExpr| match e {
            FilterExpr::Term(_) => write!(f, "{e}"),
            _ => write!(f, "({e})"),
        };
        match self {
            FilterExpr::Term(t) => {
                let at = if t.inferred { "@" } else { "" };
                if t.value.chars().all(is_word_char) && !t.value.is_empty() {
                    write!(f, "{at}{}:{}", t.key, t.value)
                } else {
                    write!(f, "{at}{}:\"{}\"", t.key, t.value.replace('\\', "\\\\").replace('"', "\\\""))
                }
            }
            FilterExpr::And(a, b) => {
                child(f, a)?;
                f.write_str(" and ")?;
                child(f, b)
            }
            FilterExpr::Or(a, b) => {
                child(f, a)?;
                f.write_str(" or ")?;
                child(f, b)
            }
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.verb {
            Verb::Search => "Search",
            Verb::Avg => "Avg",
            Verb::Min => "Min",
            Verb::Max => "Max",
            Verb::Sum => "Sum",
            Verb::Count => "Count",
            Verb::Subscribe => "Subscribe",
        };
        let target = match self.target {
            Target::Device => "Device",
            Target::Variable => "Variable",
        };
        write!(f, "{verb} {target} {}", self.filter)
    }
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, ':' | '(' | ')' | '@' | '"')
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Colon,
    At,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("'{w}'"),
            Tok::Quoted(q) => format!("\"{q}\""),
            Tok::Colon => "':'".into(),
            Tok::At => "'@'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of query".into(),
        }
    }
}

/// Tokens paired with their character offset.
fn lex(text: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            ':' => out.push((start, Tok::Colon)),
            '@' => out.push((start, Tok::At)),
            '(' => out.push((start, Tok::LParen)),
            ')' => out.push((start, Tok::RParen)),
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(QueryError::Syntax {
                                position: start,
                                expected: "closing '\"'".into(),
                            })
                        }
                        Some('"') => break,
                        Some('\\') if matches!(chars.get(i + 1), Some('"' | '\\')) => {
                            s.push(chars[i + 1]);
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push((start, Tok::Quoted(s)));
            }
            _ => {
                let mut s = String::new();
                while i < chars.len() && is_word_char(chars[i]) {
                    s.push(chars[i]);
                    i += 1;
                }
                out.push((start, Tok::Word(s)));
                continue;
            }
        }
        i += 1;
    }
    out.push((chars.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> QueryError {
        QueryError::Syntax {
            position: self.offset(),
            expected: format!("{expected}, found {}", self.peek().describe()),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn or_expr(&mut self) -> Result<FilterExpr, QueryError> {
        let mut lhs = self.and_expr()?;
        while self.is_keyword("or") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = FilterExpr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<FilterExpr, QueryError> {
        let mut lhs = self.atom()?;
        while self.is_keyword("and") {
            self.bump();
            let rhs = self.atom()?;
            lhs = FilterExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<FilterExpr, QueryError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.or_expr()?;
            if *self.peek() != Tok::RParen {
                return Err(self.error("')'"));
            }
            self.bump();
            return Ok(inner);
        }
        let inferred = if *self.peek() == Tok::At {
            self.bump();
            true
        } else {
            false
        };
        let key = match self.peek() {
            Tok::Word(w) => w.clone(),
            _ => return Err(self.error("tag key")),
        };
        self.bump();
        if *self.peek() != Tok::Colon {
            return Err(self.error("':'"));
        }
        self.bump();
        let value = match self.peek() {
            Tok::Word(w) => w.clone(),
            Tok::Quoted(q) => q.clone(),
            _ => return Err(self.error("tag value")),
        };
        self.bump();
        Ok(FilterExpr::term(inferred, &key, &value))
    }
}

/// Parses a semantic query.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let verb_pos = p.offset();
    let verb = match p.bump() {
        Tok::Word(w) => Verb::parse(&w).ok_or(QueryError::UnknownVerb {
            verb: w,
            position: verb_pos,
        })?,
        _ => {
            p.pos = 0;
            return Err(p.error("query verb"));
        }
    };
    // A word not followed by ':' in target position names the target.
    let target = match (p.peek().clone(), p.peek_at(1)) {
        (Tok::Word(w), next) if *next != Tok::Colon => {
            let position = p.offset();
            let target = match w.to_ascii_lowercase().as_str() {
                "device" => Target::Device,
                "variable" => Target::Variable,
                _ => return Err(QueryError::UnknownTarget { target: w, position }),
            };
            p.bump();
            target
        }
        _ => Target::Device,
    };
    if verb.is_aggregate() && target != Target::Variable {
        return Err(QueryError::TargetMismatch { verb });
    }
    let filter = p.or_expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error("'and', 'or' or end of query"));
    }
    Ok(Query { verb, target, filter })
}
