use num_bigint::BigInt;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    /// Lowercase-initial identifier.
    Ident(String),
    /// Uppercase- or underscore-initial identifier.
    Var(String),
    Int(BigInt),
    Str(String),
    /// `#name` directive keyword.
    Directive(String),
    LParen,
    RParen,
    Comma,
    Amp,
    Tilde,
    Slash,
    Period,
    If,
    Arrow,
    Newline,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Var(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Directive(d) => format!("`#{d}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Period => "`.`".into(),
            Tok::If => "`:-`".into(),
            Tok::Arrow => "`==>`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
    /// Position just past the token.
    pub end_line: u32,
    pub end_col: u32,
}

#[derive(Debug)]
pub struct LexError {
    pub message: String,
    pub line: u32,
    pub col: u32,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
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
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut cur = Cursor { chars: source.chars().peekable(), line: 1, col: 1 };
    let mut out = Vec::new();
    loop {
        let (line, col) = (cur.line, cur.col);
        let Some(c) = cur.peek() else {
            out.push(Token { tok: Tok::Eof, line, col, end_line: line, end_col: col });
            return Ok(out);
        };
        let err = |message: String| LexError { message, line, col };
        let tok = match c {
            ' ' | '\t' | '\r' => {
                cur.bump();
                continue;
            }
            '%' => {
                cur.take_while(|c| c != '\n');
                continue;
            }
            '\n' => {
                cur.bump();
                Tok::Newline
            }
            '(' => {
                cur.bump();
                Tok::LParen
            }
            ')' => {
                cur.bump();
                Tok::RParen
            }
            ',' => {
                cur.bump();
                Tok::Comma
            }
            '&' => {
                cur.bump();
                Tok::Amp
            }
            '~' => {
                cur.bump();
                Tok::Tilde
            }
            '/' => {
                cur.bump();
                Tok::Slash
            }
            '.' => {
                cur.bump();
                Tok::Period
            }
            ':' => {
                cur.bump();
                if cur.peek() == Some('-') {
                    cur.bump();
                    Tok::If
                } else {
                    return Err(err("expected `:-`".into()));
                }
            }
            '=' => {
                cur.bump();
                if cur.bump() == Some('=') && cur.bump() == Some('>') {
                    Tok::Arrow
                } else {
                    return Err(err("expected `==>`".into()));
                }
            }
            '#' => {
                cur.bump();
                let name = cur.take_while(is_ident_char);
                if name.is_empty() {
                    return Err(err("expected directive name after `#`".into()));
                }
                Tok::Directive(name)
            }
            '"' => {
                cur.bump();
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None | Some('\n') => return Err(err("unterminated string literal".into())),
                        Some('"') => break,
                        Some('\\') => match cur.bump() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            other => {
                                return Err(err(format!(
                                    "unsupported escape `\\{}`",
                                    other.map(String::from).unwrap_or_default()
                                )))
                            }
                        },
                        Some(c) => s.push(c),
                    }
                }
                Tok::Str(s)
            }
            '-' | '0'..='9' => {
                let mut text = String::new();
                if c == '-' {
                    cur.bump();
                    text.push('-');
                    if !cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                        return Err(err("expected digits after `-`".into()));
                    }
                }
                text.push_str(&cur.take_while(|c| c.is_ascii_digit()));
                if cur.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
                    return Err(err("identifiers cannot start with a digit".into()));
                }
                Tok::Int(text.parse().expect("digits parse as integer"))
            }
            c if c.is_ascii_lowercase() => Tok::Ident(cur.take_while(is_ident_char)),
            c if c.is_ascii_uppercase() || c == '_' => Tok::Var(cur.take_while(is_ident_char)),
            other => {
                cur.bump();
                return Err(err(format!("unexpected character `{other}`")));
            }
        };
        out.push(Token { tok, line, col, end_line: cur.line, end_col: cur.col });
    }
}
