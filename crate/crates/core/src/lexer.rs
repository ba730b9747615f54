//! A tolerant lexer for C-like source text.
//!
//! The lexer never fails: malformed input produces a best-effort token stream
//! plus an [`Unterminated`] marker describing where the text ran out.

/// Token classes recognised by [`lex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based line of the first character.
    pub line: usize,
    /// Byte offset of the first character.
    pub offset: usize,
}

impl Token {
    pub fn is(&self, s: &str) -> bool {
        self.text == s
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Ident
    }
}

/// Construct that was still open when the text ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unterminated {
    BlockComment { line: usize },
    StringLiteral { line: usize },
    CharLiteral { line: usize },
}

#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub unterminated: Option<Unterminated>,
}

const PUNCTS: &[&str] = &[
    ">>=", "<<=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "^=", "|=", "##", "::",
];

/// Byte ranges of comments, with the same tolerance rules as [`lex`].
///
/// A `//` comment ends before its newline; a block comment ends after `*/`,
/// or at the end of the text when unterminated.
pub fn comment_spans(src: &str) -> (Vec<std::ops::Range<usize>>, Option<Unterminated>) {
    let mut spans = Vec::new();
    let mut open = None;
    scan(src, |ev| match ev {
        Event::Comment(r) => spans.push(r),
        Event::Unterminated(u) => open = Some(u),
        Event::Token(..) => {}
    });
    (spans, open)
}

/// Tokenize `src`, skipping whitespace and comments.
pub fn lex(src: &str) -> Lexed {
    let mut out = Lexed::default();
    scan(src, |ev| match ev {
        Event::Token(kind, range, line) => out.tokens.push(Token {
            kind,
            text: src[range.clone()].to_string(),
            line,
            offset: range.start,
        }),
        Event::Unterminated(u) => out.unterminated = Some(u),
        Event::Comment(_) => {}
    });
    out
}

enum Event {
    Token(TokenKind, std::ops::Range<usize>, usize),
    Comment(std::ops::Range<usize>),
    Unterminated(Unterminated),
}

fn scan(src: &str, mut emit: impl FnMut(Event)) {
    let bytes = src.as_bytes();
    let mut i = 0;
    let mut line = 1;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                let start = i;
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                emit(Event::Comment(start..i));
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let start = i;
                let start_line = line;
                i += 2;
                let mut closed = false;
                while i < bytes.len() {
                    if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
                        i += 2;
                        closed = true;
                        break;
                    }
                    if bytes[i] == b'\n' {
                        line += 1;
                    }
                    i += 1;
                }
                emit(Event::Comment(start..i));
                if !closed {
                    emit(Event::Unterminated(Unterminated::BlockComment { line: start_line }));
                }
            }
            b'"' | b'\'' => {
                let start = i;
                let start_line = line;
                i += 1;
                let mut closed = false;
                while i < bytes.len() {
                    match bytes[i] {
                        b'\\' => {
                            if bytes.get(i + 1) == Some(&b'\n') {
                                line += 1;
                            }
                            i += 2;
                        }
                        b'\n' => break,
                        b if b == c => {
                            i += 1;
                            closed = true;
                            break;
                        }
                        _ => i += 1,
                    }
                }
                let i_end = i.min(bytes.len());
                let kind = if c == b'"' { TokenKind::Str } else { TokenKind::Char };
                emit(Event::Token(kind, start..i_end, start_line));
                i = i_end;
                if !closed {
                    emit(Event::Unterminated(if c == b'"' {
                        Unterminated::StringLiteral { line: start_line }
                    } else {
                        Unterminated::CharLiteral { line: start_line }
                    }));
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80)
                {
                    i += 1;
                }
                emit(Event::Token(TokenKind::Ident, start..i, line));
            }
            c if c.is_ascii_digit()
                || (c == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) =>
            {
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let b = bytes[i];
                    let exponent_sign = (b == b'+' || b == b'-') && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P');
                    if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || exponent_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                emit(Event::Token(TokenKind::Number, start..i, line));
            }
            _ => {
                let start = i;
                let len = PUNCTS
                    .iter()
                    .find(|p| bytes[i..].starts_with(p.as_bytes()))
                    .map_or(1, |p| p.len());
                i += len;
                emit(Event::Token(TokenKind::Punct, start..i, line));
            }
        }
    }
}
