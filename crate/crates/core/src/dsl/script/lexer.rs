use crate::dsl::cursor::Cursor;
use crate::dsl::DslError;

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Keyword(&'static str),
    Sym(&'static str),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(_) => "string".into(),
            Tok::Keyword(k) => format!("'{k}'"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of file".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(super) struct Token {
    pub tok: Tok,
    pub line: u32,
    pub column: u32,
}

const KEYWORDS: [&str; 17] = [
    "function", "end", "if", "then", "elseif", "else", "for", "do", "while", "local", "return",
    "and", "or", "not", "true", "false", "nil",
];

const SYMBOLS: [&str; 19] = [
    "==", "!=", "<=", ">=", "(", ")", "[", "]", ",", ".", "=", "<", ">", "+", "-", "*", "/", "%", ";",
];

pub(super) fn lex(text: &str) -> Result<Vec<Token>, DslError> {
    let mut cur = Cursor::new(text);
    let mut out = Vec::new();
    loop {
        // whitespace and `--` comments
        loop {
            match cur.peek() {
                Some(c) if c.is_whitespace() => {
                    cur.bump();
                }
                Some('-') if cur.peek_at(1) == Some('-') => {
                    cur.eat_while(|c| c != '\n');
                }
                _ => break,
            }
        }
        let (line, column) = (cur.line(), cur.column());
        let Some(c) = cur.peek() else {
            out.push(Token {
                tok: Tok::Eof,
                line,
                column,
            });
            return Ok(out);
        };
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let word = cur.eat_while(|c| c.is_ascii_alphanumeric() || c == '_');
            match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => Tok::Keyword(k),
                None => Tok::Ident(word),
            }
        } else if c.is_ascii_digit() {
            Tok::Number(cur.number()?)
        } else if c == '"' {
            Tok::Str(cur.string()?)
        } else {
            let two: String = [Some(c), cur.peek_at(1)].into_iter().flatten().collect();
            // two-character symbols come first in SYMBOLS
            match SYMBOLS.iter().find(|s| two.starts_with(**s)) {
                Some(sym) => {
                    for _ in 0..sym.chars().count() {
                        cur.bump();
                    }
                    Tok::Sym(sym)
                }
                None => {
                    return Err(DslError::source(line, column, format!("unexpected character '{c}'"), None))
                }
            }
        };
        out.push(Token { tok, line, column });
    }
}
