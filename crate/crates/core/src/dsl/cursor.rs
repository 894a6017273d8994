use super::DslError;

/// Character cursor with line/column tracking shared by both lexers.
pub(crate) struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    column: u32,
}

impl Cursor {
    pub fn new(text: &str) -> Self {
        Self {
            chars: text.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    pub fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    pub fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).copied()
    }

    pub fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    pub fn line(&self) -> u32 {
        self.line
    }

    pub fn column(&self) -> u32 {
        self.column
    }

    pub fn eat_while(&mut self, mut pred: impl FnMut(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    /// Lexes a decimal number: digits, optional fraction, optional exponent.
    pub fn number(&mut self) -> Result<f64, DslError> {
        let (line, column) = (self.line, self.column);
        let mut s = self.eat_while(|c| c.is_ascii_digit());
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            s.push('.');
            self.bump();
            s.push_str(&self.eat_while(|c| c.is_ascii_digit()));
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let sign = matches!(self.peek_at(1), Some('+' | '-'));
            let digit_at = if sign { 2 } else { 1 };
            if self.peek_at(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                s.push('e');
                self.bump();
                if sign {
                    s.push(self.bump().unwrap_or('+'));
                }
                s.push_str(&self.eat_while(|c| c.is_ascii_digit()));
            }
        }
        match s.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(n),
            _ => Err(DslError::source(line, column, format!("number literal '{s}' out of range"), None)),
        }
    }

    /// Lexes a double-quoted string; the cursor sits on the opening quote.
    pub fn string(&mut self) -> Result<String, DslError> {
        let (line, column) = (self.line, self.column);
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => {
                    return Err(DslError::source(line, column, "unterminated string", Some("'\"'")))
                }
                Some('"') => return Ok(s),
                Some('\\') => {
                    let (l, c) = (self.line, self.column);
                    match self.bump() {
                        Some('"') => s.push('"'),
                        Some('\\') => s.push('\\'),
                        Some('n') => s.push('\n'),
                        other => {
                            return Err(DslError::source(
                                l,
                                c,
                                format!("invalid escape '\\{}'", other.map(String::from).unwrap_or_default()),
                                Some("one of \\\" \\\\ \\n"),
                            ))
                        }
                    }
                }
                Some(c) => s.push(c),
            }
        }
    }
}
