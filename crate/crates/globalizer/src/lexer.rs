//! Lossless tokenizer for preprocessed C.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    Str,
    Char,
    Punctuator,
    Whitespace,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based position of the first byte.
    pub line: usize,
    pub col: usize,
}

impl Token {
    /// Whitespace and comments.
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }

    pub fn is(&self, text: &str) -> bool {
        !self.is_trivia() && self.text == text
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Identifier
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("{line}:{col}: unterminated string literal")]
    UnterminatedString { line: usize, col: usize },
    #[error("{line}:{col}: unterminated character constant")]
    UnterminatedChar { line: usize, col: usize },
    #[error("{line}:{col}: unterminated comment")]
    UnterminatedComment { line: usize, col: usize },
}

pub const KEYWORDS: [&str; 44] = [
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern",
    "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "_Alignas",
    "_Alignof", "_Atomic", "_Bool", "_Complex", "_Generic", "_Imaginary", "_Noreturn", "_Static_assert",
    "_Thread_local",
];

const PUNCTUATORS: [&str; 48] = [
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "*=", "/=", "%=", "+=",
    "-=", "&=", "^=", "|=", "##", "[", "]", "(", ")", "{", "}", ".", "&", "*", "+", "-", "~", "!", "/", "%", "<",
    ">", "^", "|", "?", ":", ";", "=", ",", "#",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn bump_n(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }

    fn at_line_start(&self) -> bool {
        self.src[..self.pos].rsplit('\n').next().is_none_or(|l| l.trim().is_empty())
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// Splits `src` into tokens whose texts concatenate back to `src`.
///
/// Lines starting with `#` (line markers and any directive left over after
/// preprocessing) become whitespace tokens.
pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let mut cur = Cursor { src, pos: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        let (start, line, col) = (cur.pos, cur.line, cur.col);
        let kind = if c == '#' && cur.at_line_start() {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                if c == '\\' && cur.peek_at(1) == Some('\n') {
                    cur.bump_n(2);
                    continue;
                }
                cur.bump();
            }
            TokenKind::Whitespace
        } else if c.is_whitespace() || (c == '\\' && cur.peek_at(1) == Some('\n')) {
            while let Some(c) = cur.peek() {
                if c.is_whitespace() {
                    cur.bump();
                } else if c == '\\' && cur.peek_at(1) == Some('\n') {
                    cur.bump_n(2);
                } else {
                    break;
                }
            }
            TokenKind::Whitespace
        } else if cur.rest().starts_with("//") {
            while cur.peek().is_some_and(|c| c != '\n') {
                cur.bump();
            }
            TokenKind::Comment
        } else if cur.rest().starts_with("/*") {
            let Some(end) = cur.rest()[2..].find("*/") else {
                return Err(LexError::UnterminatedComment { line, col });
            };
            let n = cur.rest()[..end + 4].chars().count();
            cur.bump_n(n);
            TokenKind::Comment
        } else if let Some(prefix) = literal_prefix(cur.rest()) {
            cur.bump_n(prefix.chars().count());
            let quote = cur.bump().expect("quote");
            scan_quoted(&mut cur, quote, line, col)?;
            if quote == '"' {
                TokenKind::Str
            } else {
                TokenKind::Char
            }
        } else if is_ident_start(c) {
            while cur.peek().is_some_and(is_ident_char) {
                cur.bump();
            }
            if is_keyword(&src[start..cur.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            cur.bump();
            while let Some(c) = cur.peek() {
                if matches!(c, 'e' | 'E' | 'p' | 'P') && matches!(cur.peek_at(1), Some('+' | '-')) {
                    cur.bump_n(2);
                } else if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                    cur.bump();
                } else {
                    break;
                }
            }
            TokenKind::Number
        } else {
            let p = PUNCTUATORS.iter().find(|p| cur.rest().starts_with(*p));
            cur.bump_n(p.map_or(1, |p| p.len()));
            TokenKind::Punctuator
        };
        out.push(Token { kind, text: src[start..cur.pos].to_string(), line, col });
    }
    Ok(out)
}

/// Encoding prefix of a string or character literal starting here.
fn literal_prefix(rest: &str) -> Option<&'static str> {
    ["u8", "u", "U", "L", ""].into_iter().find(|p| {
        rest.strip_prefix(p).is_some_and(|r| r.starts_with('"') || r.starts_with('\''))
    })
}

fn scan_quoted(cur: &mut Cursor<'_>, quote: char, line: usize, col: usize) -> Result<(), LexError> {
    let err = || {
        if quote == '"' {
            LexError::UnterminatedString { line, col }
        } else {
            LexError::UnterminatedChar { line, col }
        }
    };
    loop {
        match cur.peek() {
            None | Some('\n') => return Err(err()),
            Some('\\') => {
                cur.bump();
                if cur.bump().is_none() {
                    return Err(err());
                }
            }
            Some(c) => {
                cur.bump();
                if c == quote {
                    return Ok(());
                }
            }
        }
    }
}

/// Positions of `#` lines that are not line markers (`# <digit>`).
pub fn stray_directives(tokens: &[Token]) -> Vec<(usize, usize)> {
    tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Whitespace && t.text.starts_with('#'))
        .filter(|t| !t.text[1..].trim_start().starts_with(|c: char| c.is_ascii_digit()))
        .map(|t| (t.line, t.col))
        .collect()
}
