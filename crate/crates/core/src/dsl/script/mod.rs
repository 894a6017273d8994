//! RuleScript: a small Lua-flavoured language for rule files.
//!
//! The grammar is published in `docs/grammar.ebnf` at the repository root.

mod ast;
mod format;
mod lexer;
mod parser;

pub use ast::*;
pub use format::{format_expr, format_script};
pub use parser::parse_rule;
