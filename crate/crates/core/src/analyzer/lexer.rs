//! A forgiving C/C++ tokenizer. Comments vanish, string and char literals
//! become single tokens, and each preprocessor directive is one token that
//! spans its continuation lines.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
    Directive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub end_line: u32,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

#[derive(Debug, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    /// Set when a block comment or raw string runs off the end of input.
    pub unterminated: Option<u32>,
}

const PUNCT3: [&str; 5] = ["<<=", ">>=", "...", "->*", "<=>"];
const PUNCT2: [&str; 19] = [
    "::", "->", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", ".*",
];

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b'$' || b >= 0x80
}

fn is_ident_continue(b: u8) -> bool {
    is_ident_start(b) || b.is_ascii_digit()
}

pub fn lex(src: &str) -> Lexed {
    let b = src.as_bytes();
    let mut out = Lexed::default();
    let mut i = 0;
    let mut line: u32 = 1;
    // Only whitespace seen since the last newline: a '#' here opens a directive.
    let mut at_line_start = true;
    while i < b.len() {
        let c = b[i];
        match c {
            b'\n' => {
                line += 1;
                at_line_start = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | b'\x0c' | b'\x0b' => i += 1,
            b'\\' if b.get(i + 1) == Some(&b'\n') => {
                line += 1;
                i += 2;
            }
            b'\\' if b.get(i + 1) == Some(&b'\r') && b.get(i + 2) == Some(&b'\n') => {
                line += 1;
                i += 3;
            }
            b'/' if b.get(i + 1) == Some(&b'/') => {
                while i < b.len() && b[i] != b'\n' {
                    if b[i] == b'\\' && b.get(i + 1) == Some(&b'\n') {
                        line += 1;
                        i += 1;
                    }
                    i += 1;
                }
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                let open_line = line;
                i += 2;
                loop {
                    if i >= b.len() {
                        out.unterminated.get_or_insert(open_line);
                        break;
                    }
                    if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                        i += 2;
                        break;
                    }
                    if b[i] == b'\n' {
                        line += 1;
                    }
                    i += 1;
                }
            }
            b'#' if at_line_start => {
                let start = i;
                let start_line = line;
                let mut in_block_comment = false;
                while i < b.len() {
                    if in_block_comment {
                        if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                            in_block_comment = false;
                            i += 2;
                            continue;
                        }
                        if b[i] == b'\n' {
                            line += 1;
                        }
                        i += 1;
                        continue;
                    }
                    match b[i] {
                        b'\n' => break,
                        b'/' if b.get(i + 1) == Some(&b'*') => {
                            in_block_comment = true;
                            i += 2;
                        }
                        b'\\' if b.get(i + 1) == Some(&b'\n') => {
                            line += 1;
                            i += 2;
                        }
                        b'\\' if b.get(i + 1) == Some(&b'\r') && b.get(i + 2) == Some(&b'\n') => {
                            line += 1;
                            i += 3;
                        }
                        _ => i += 1,
                    }
                }
                let mut end = i;
                while end > start && matches!(b[end - 1], b'\r' | b' ' | b'\t') {
                    end -= 1;
                }
                out.tokens.push(Token { kind: TokKind::Directive, start, end, line: start_line, end_line: line });
            }
            b'"' => {
                let start_line = line;
                let (end, nl) = scan_quoted(b, i, b'"');
                line += nl;
                out.tokens.push(Token { kind: TokKind::Str, start: i, end, line: start_line, end_line: line });
                i = end;
            }
            b'\'' => {
                let start_line = line;
                let (end, nl) = scan_quoted(b, i, b'\'');
                line += nl;
                out.tokens.push(Token { kind: TokKind::Char, start: i, end, line: start_line, end_line: line });
                i = end;
            }
            c if c.is_ascii_digit() || (c == b'.' && b.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                let start = i;
                i += 1;
                while i < b.len() {
                    let d = b[i];
                    let digit_sep = d == b'\'' && b.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric());
                    let exponent_sign = (d == b'+' || d == b'-') && matches!(b[i - 1], b'e' | b'E' | b'p' | b'P');
                    if is_ident_continue(d) || d == b'.' || digit_sep || exponent_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.tokens.push(Token { kind: TokKind::Number, start, end: i, line, end_line: line });
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < b.len() && is_ident_continue(b[i]) {
                    i += 1;
                }
                let word = &src[start..i];
                let next = b.get(i).copied();
                if next == Some(b'"') && matches!(word, "R" | "LR" | "uR" | "UR" | "u8R") {
                    let start_line = line;
                    let (end, nl, ok) = scan_raw_string(b, i);
                    if !ok {
                        out.unterminated.get_or_insert(start_line);
                    }
                    line += nl;
                    out.tokens.push(Token { kind: TokKind::Str, start, end, line: start_line, end_line: line });
                    i = end;
                } else if matches!(next, Some(b'"') | Some(b'\'')) && matches!(word, "L" | "u" | "U" | "u8") {
                    let q = next.unwrap();
                    let start_line = line;
                    let (end, nl) = scan_quoted(b, i, q);
                    line += nl;
                    let kind = if q == b'"' { TokKind::Str } else { TokKind::Char };
                    out.tokens.push(Token { kind, start, end, line: start_line, end_line: line });
                    i = end;
                } else {
                    out.tokens.push(Token { kind: TokKind::Ident, start, end: i, line, end_line: line });
                }
            }
            _ => {
                let rest = &src[i..];
                let len = PUNCT3
                    .iter()
                    .find(|p| rest.starts_with(**p))
                    .map(|p| p.len())
                    .or_else(|| PUNCT2.iter().find(|p| rest.starts_with(**p)).map(|p| p.len()))
                    .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
                out.tokens.push(Token { kind: TokKind::Punct, start: i, end: i + len, line, end_line: line });
                i += len;
            }
        }
        if !matches!(c, b'\n' | b' ' | b'\t' | b'\r' | b'\x0c' | b'\x0b') {
            at_line_start = false;
        }
    }
    out
}

/// Scans a quoted literal starting at the opening quote. Stops at the closing
/// quote or, leniently, at an unescaped end of line. Returns the end offset and
/// the number of escaped newlines crossed.
fn scan_quoted(b: &[u8], open: usize, quote: u8) -> (usize, u32) {
    let mut i = open + 1;
    let mut nl = 0;
    while i < b.len() {
        match b[i] {
            b'\\' => {
                if b.get(i + 1) == Some(&b'\n') {
                    nl += 1;
                }
                i += 2;
            }
            b'\n' => return (i, nl),
            c if c == quote => return (i + 1, nl),
            _ => i += 1,
        }
    }
    (b.len(), nl)
}

fn scan_raw_string(b: &[u8], quote: usize) -> (usize, u32, bool) {
    let mut i = quote + 1;
    let delim_start = i;
    while i < b.len() && b[i] != b'(' && b[i] != b'\n' && i - delim_start <= 16 {
        i += 1;
    }
    if b.get(i) != Some(&b'(') {
        let (end, nl) = scan_quoted(b, quote, b'"');
        return (end, nl, true);
    }
    let delim = &b[delim_start..i];
    let mut nl = 0;
    i += 1;
    while i < b.len() {
        if b[i] == b'\n' {
            nl += 1;
        }
        if b[i] == b')' && b[i + 1..].starts_with(delim) && b.get(i + 1 + delim.len()) == Some(&b'"') {
            return (i + 2 + delim.len(), nl, true);
        }
        i += 1;
    }
    (b.len(), nl, false)
}

/// The directive keyword after `#`, e.g. "define" or "ifdef".
pub fn directive_name(text: &str) -> &str {
    let rest = text.trim_start_matches('#').trim_start();
    let end = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
    &rest[..end]
}
