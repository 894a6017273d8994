//! Parsers for the two rule-facing languages: RuleScript (`*.rs.sre` files)
//! and the event-condition sub-language used by `engine.subscribe`.

pub mod condition;
mod cursor;
pub mod script;

use std::fmt;

use thiserror::Error;

pub use condition::{
    format_condition, parse_condition, parse_reference, Comparator, ConditionExpr, ConditionTerm, TermKind,
};
pub use script::{
    format_script, parse_rule, BinOp, Block, Builtin, Call, Callee, Expr, FuncDef, RuleScript,
    Stmt, StmtKind, UnOp,
};

/// First error found in a source text. Lines and columns are 1-based and
/// count characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceError {
    pub line: u32,
    pub column: u32,
    pub message: String,
    pub expected: Option<String>,
}

impl fmt::Display for SourceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if let Some(e) = &self.expected {
            write!(f, " (expected {e})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("{0}")]
    Source(SourceError),
    #[error("rule '{rule}' has no init function")]
    MissingInit { rule: String },
    #[error("line {line}: function prefix '{found}' does not match rule name '{expected}'")]
    NameMismatch {
        expected: String,
        found: String,
        line: u32,
    },
    #[error("{line}:{column}: invalid comparator '{found}'")]
    InvalidComparator {
        line: u32,
        column: u32,
        found: String,
    },
    #[error("empty condition")]
    EmptyCondition,
}

impl DslError {
    pub fn code(&self) -> &'static str {
        match self {
            DslError::Source(_) => "SourceError",
            DslError::MissingInit { .. } => "MissingInit",
            DslError::NameMismatch { .. } => "NameMismatch",
            DslError::InvalidComparator { .. } => "InvalidComparator",
            DslError::EmptyCondition => "EmptyCondition",
        }
    }

    pub(crate) fn source(line: u32, column: u32, message: impl Into<String>, expected: Option<&str>) -> Self {
        DslError::Source(SourceError {
            line,
            column,
            message: message.into(),
            expected: expected.map(str::to_owned),
        })
    }
}

/// Maximum nesting of parentheses, blocks and unary operators.
pub(crate) const MAX_NESTING: usize = 100;

/// Quotes a string literal using the `\" \\ \n` escapes both languages accept.
pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
