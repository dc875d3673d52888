//! Brace-level structure of a C/C++ translation unit: function definitions,
//! struct/class bodies and file-scope declarations.
//!
//! The scanner keeps a stack of scopes. In declarative scopes (file,
//! namespace, `extern "C"`, class bodies) it accumulates the tokens of the
//! current declaration and classifies them when a `{` or `;` arrives. Function
//! and skipped bodies are only brace-counted, except that a class defined
//! inside a function body is scanned like any other class. Only the first
//! branch of each `#if` chain is read (the `#else` branch of `#if 0`).

use super::lexer::{directive_name, lex, TokKind, Token};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub named: bool,
    pub start_line: u32,
    pub end_line: u32,
    /// Token index of the declarator identifier, when one was found.
    pub declarator: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDef {
    pub name: Option<String>,
    pub start_line: u32,
    pub end_line: u32,
    pub fields: Vec<(String, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokCtx {
    Inactive,
    Directive,
    /// Declarative scope; `true` inside a class body.
    Decl { in_class: bool },
    Body(usize),
    Skipped,
}

#[derive(Debug, Clone)]
pub struct FileStructure {
    pub tokens: Vec<Token>,
    pub ctx: Vec<TokCtx>,
    pub functions: Vec<FunctionDef>,
    pub records: Vec<RecordDef>,
    pub globals: Vec<(String, u32)>,
    pub directive_lines: Vec<(u32, u32)>,
    pub line_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureError {
    pub line: u32,
    pub reason: String,
}

pub(crate) const CONTROL_KEYWORDS: &[&str] = &[
    "if", "while", "for", "switch", "return", "catch", "sizeof", "do", "else", "case", "goto", "throw", "new", "delete",
    "co_return", "co_await", "co_yield", "typeid", "alignof", "_Alignof", "defined",
];

const ATTRIBUTE_CALLS: &[&str] = &[
    "__attribute__", "__attribute", "__declspec", "alignas", "_Alignas", "decltype", "__asm__", "__asm", "asm",
    "noexcept", "throw", "typeof", "__typeof__", "__typeof", "static_assert", "_Static_assert", "__pragma", "_Pragma",
];

const ACCESS: &[&str] = &["public", "private", "protected", "signals", "slots", "Q_SIGNALS", "Q_SLOTS"];

pub(crate) const TYPE_WORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "bool", "_Bool", "auto", "const",
    "volatile", "static", "extern", "inline", "register", "struct", "union", "enum", "class", "typename", "size_t",
    "ssize_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "int8_t", "int16_t", "int32_t", "int64_t", "wchar_t",
    "restrict", "__restrict", "constexpr", "mutable", "virtual", "explicit", "thread_local", "_Thread_local",
];

enum Frame {
    Decl { in_class: bool, class_name: Option<String>, record: Option<usize>, saved_head: Vec<usize> },
    Body { func: usize, depth: u32 },
    Skip { depth: u32, keep_head: bool, saved_head: Vec<usize> },
}

enum BraceKind {
    Namespace,
    Linkage,
    Class(Option<String>),
    Function { name: String, named: bool, first: usize, declarator: Option<usize> },
    /// Brace belongs to the ongoing declaration (initializer, enum body).
    KeepHead,
    Other,
}

pub fn scan(src: &str) -> Result<FileStructure, StructureError> {
    let lexed = lex(src);
    if let Some(line) = lexed.unterminated {
        return Err(StructureError { line, reason: "unterminated comment or raw string".into() });
    }
    let tokens = lexed.tokens;
    let active = active_mask(src, &tokens);
    let mut s = Scanner {
        src,
        tokens: &tokens,
        ctx: vec![TokCtx::Inactive; tokens.len()],
        functions: Vec::new(),
        records: Vec::new(),
        globals: Vec::new(),
        directive_lines: Vec::new(),
        placeholders: Vec::new(),
        record_ends: Vec::new(),
    };
    let mut stack = vec![Frame::Decl { in_class: false, class_name: None, record: None, saved_head: Vec::new() }];
    let mut head: Vec<usize> = Vec::new();
    // Tokens of the current statement inside a function body.
    let mut body_head: Vec<usize> = Vec::new();

    for (idx, tok) in tokens.iter().enumerate() {
        if tok.kind == TokKind::Directive {
            s.ctx[idx] = TokCtx::Directive;
            s.directive_lines.push((tok.line, tok.end_line));
            continue;
        }
        if !active[idx] {
            continue;
        }
        let text = tok.text(src);
        let top = stack.last_mut().unwrap();
        match top {
            Frame::Body { func, depth } => {
                s.ctx[idx] = TokCtx::Body(*func);
                if text == "{" {
                    match s.local_class(&body_head) {
                        Some(name) => {
                            s.ctx[idx] = TokCtx::Decl { in_class: true };
                            stack.push(Frame::Decl { in_class: true, class_name: Some(name), record: None, saved_head: Vec::new() });
                        }
                        None => *depth += 1,
                    }
                    body_head.clear();
                } else if text == "}" {
                    body_head.clear();
                    if *depth == 0 {
                        s.functions[*func].end_line = tok.line;
                        stack.pop();
                        head.clear();
                    } else {
                        *depth -= 1;
                    }
                } else if text == ";" {
                    body_head.clear();
                } else {
                    body_head.push(idx);
                }
            }
            Frame::Skip { depth, keep_head, .. } => {
                s.ctx[idx] = TokCtx::Skipped;
                if text == "{" {
                    *depth += 1;
                } else if text == "}" {
                    if *depth == 0 {
                        let keep = *keep_head;
                        if let Some(Frame::Skip { saved_head, .. }) = stack.pop() {
                            head = saved_head;
                        }
                        if keep {
                            s.placeholders.push(idx);
                            head.push(idx);
                        } else {
                            head.clear();
                        }
                    } else {
                        *depth -= 1;
                    }
                }
            }
            Frame::Decl { in_class, class_name, .. } => {
                let in_class = *in_class;
                let class_name = class_name.clone();
                s.ctx[idx] = TokCtx::Decl { in_class };
                match text {
                    "{" => {
                        let kind = s.classify_brace(&head, in_class, class_name.as_deref());
                        let saved = std::mem::take(&mut head);
                        match kind {
                            BraceKind::Namespace | BraceKind::Linkage => {
                                stack.push(Frame::Decl { in_class: false, class_name: None, record: None, saved_head: Vec::new() });
                            }
                            BraceKind::Class(name) => {
                                s.records.push(RecordDef { name: name.clone(), start_line: first_line(&tokens, &saved, tok.line), end_line: tok.line, fields: Vec::new() });
                                let qualified = match (&class_name, name) {
                                    (Some(outer), Some(inner)) => Some(format!("{outer}::{inner}")),
                                    (None, n) => n,
                                    (Some(outer), None) => Some(outer.clone()),
                                };
                                stack.push(Frame::Decl { in_class: true, class_name: qualified, record: Some(s.records.len() - 1), saved_head: saved });
                            }
                            BraceKind::Function { name, named, first, declarator } => {
                                let full = match (&class_name, named && !name.contains("::")) {
                                    (Some(c), true) => format!("{c}::{name}"),
                                    _ => name,
                                };
                                s.functions.push(FunctionDef { name: full, named, start_line: tokens[first].line, end_line: tok.line, declarator });
                                s.ctx[idx] = TokCtx::Body(s.functions.len() - 1);
                                stack.push(Frame::Body { func: s.functions.len() - 1, depth: 0 });
                            }
                            BraceKind::KeepHead => {
                                stack.push(Frame::Skip { depth: 0, keep_head: true, saved_head: saved });
                            }
                            BraceKind::Other => {
                                stack.push(Frame::Skip { depth: 0, keep_head: false, saved_head: Vec::new() });
                            }
                        }
                    }
                    "}" => {
                        if stack.len() == 1 {
                            return Err(StructureError { line: tok.line, reason: "unmatched '}'".into() });
                        }
                        if let Some(Frame::Decl { record, saved_head, .. }) = stack.pop() {
                            if let Some(r) = record {
                                s.records[r].end_line = tok.line;
                                head = saved_head;
                                s.placeholders.push(idx);
                                s.record_ends.push(idx);
                                head.push(idx);
                            } else {
                                head.clear();
                            }
                        }
                    }
                    ";" if !in_class && s.knr_declarations(&head) => head.push(idx),
                    ";" => {
                        let record = match stack.last() {
                            Some(Frame::Decl { record, .. }) => *record,
                            _ => None,
                        };
                        s.classify_statement(&head, record);
                        head.clear();
                    }
                    ":" if head.len() == 1 && ACCESS.contains(&tokens[head[0]].text(src)) => head.clear(),
                    _ => head.push(idx),
                }
            }
        }
    }
    if stack.len() > 1 {
        let line = tokens.last().map_or(1, |t| t.end_line);
        return Err(StructureError { line, reason: format!("{} unclosed scope(s) at end of file", stack.len() - 1) });
    }
    let line_count = line_count(src);
    Ok(FileStructure {
        ctx: s.ctx,
        functions: s.functions,
        records: s.records,
        globals: s.globals,
        directive_lines: s.directive_lines,
        tokens,
        line_count,
    })
}

pub fn line_count(src: &str) -> u32 {
    if src.is_empty() {
        0
    } else {
        (src.matches('\n').count() + usize::from(!src.ends_with('\n'))) as u32
    }
}

fn first_line(tokens: &[Token], head: &[usize], fallback: u32) -> u32 {
    head.first().map_or(fallback, |&i| tokens[i].line)
}

/// Marks tokens that sit in a branch of a conditional the scanner reads.
fn active_mask(src: &str, tokens: &[Token]) -> Vec<bool> {
    struct Cond {
        taking: bool,
        taken: bool,
    }
    let mut stack: Vec<Cond> = Vec::new();
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        if t.kind == TokKind::Directive {
            let text = t.text(src);
            let name = directive_name(text);
            let arg = text.trim_start_matches('#').trim_start()[name.len()..].trim();
            let arg = arg.split("//").next().unwrap_or("").trim();
            match name {
                "if" | "ifdef" | "ifndef" => {
                    let dead = name == "if" && matches!(arg, "0" | "false" | "(0)");
                    stack.push(Cond { taking: !dead, taken: !dead });
                }
                "elif" | "elifdef" | "elifndef" => {
                    if let Some(c) = stack.last_mut() {
                        c.taking = !c.taken;
                        c.taken = true;
                    }
                }
                "else" => {
                    if let Some(c) = stack.last_mut() {
                        c.taking = !c.taken;
                        c.taken = true;
                    }
                }
                "endif" => {
                    stack.pop();
                }
                _ => {}
            }
            out.push(true);
        } else {
            out.push(stack.iter().all(|c| c.taking));
        }
    }
    out
}

struct Scanner<'a> {
    src: &'a str,
    tokens: &'a [Token],
    ctx: Vec<TokCtx>,
    functions: Vec<FunctionDef>,
    records: Vec<RecordDef>,
    globals: Vec<(String, u32)>,
    directive_lines: Vec<(u32, u32)>,
    /// Closing-brace tokens standing in for an already consumed body.
    placeholders: Vec<usize>,
    record_ends: Vec<usize>,
}

impl<'a> Scanner<'a> {
    fn t(&self, i: usize) -> &'a str {
        self.tokens[i].text(self.src)
    }

    fn is_placeholder(&self, i: usize) -> bool {
        self.placeholders.contains(&i)
    }

    fn classify_brace(&self, head: &[usize], in_class: bool, class_name: Option<&str>) -> BraceKind {
        let h = strip_prefix_noise(self.src, self.tokens, head);
        if h.is_empty() {
            return BraceKind::Other;
        }
        let words: Vec<&str> = h.iter().map(|&i| self.t(i)).collect();
        if words[0] == "namespace" || (words[0] == "inline" && words.get(1) == Some(&"namespace")) {
            return BraceKind::Namespace;
        }
        if words[0] == "extern" && h.get(1).is_some_and(|&i| self.tokens[i].kind == TokKind::Str) && h.len() == 2 {
            return BraceKind::Linkage;
        }
        if has_top_level_assign(&words) {
            return BraceKind::KeepHead;
        }
        let parens = top_level_paren_groups(self.src, self.tokens, h);
        let record_kw = words.iter().position(|w| matches!(*w, "class" | "struct" | "union"));
        if let Some(kw) = record_kw {
            if parens.is_empty() && !h.iter().any(|&i| self.is_placeholder(i)) {
                return BraceKind::Class(record_name(&words[kw + 1..]));
            }
        }
        if words.contains(&"enum") && parens.is_empty() {
            return BraceKind::KeepHead;
        }
        if parens.is_empty() {
            return if h.iter().any(|&i| self.is_placeholder(i)) { BraceKind::Other } else { BraceKind::KeepHead };
        }
        match find_declarator(self.src, self.tokens, h, in_class, class_name) {
            Some(d) => {
                // Member initializer braces: `A() : m{1}, n{2} {`.
                let after = &h[d.close_paren + 1..];
                let has_init_colon = after.iter().any(|&i| self.t(i) == ":");
                let last = *h.last().unwrap();
                let last_text = self.t(last);
                let last_is_name = self.tokens[last].kind == TokKind::Ident || last_text == ">";
                if has_init_colon && last_is_name && !self.is_placeholder(last) {
                    return BraceKind::KeepHead;
                }
                if d.control {
                    return BraceKind::Other;
                }
                // A template clause belongs to the definition it introduces.
                let first = if d.first == 0 { head[0] } else { h[d.first] };
                BraceKind::Function { name: d.name, named: d.named, first, declarator: d.declarator.map(|k| h[k]) }
            }
            None => BraceKind::Other,
        }
    }

    /// `struct Name {` (or class/union) opening a class local to a function.
    fn local_class(&self, body_head: &[usize]) -> Option<String> {
        let words: Vec<&str> = body_head.iter().map(|&i| self.t(i)).collect();
        let words = words.strip_prefix(&["typedef"]).unwrap_or(&words);
        if !matches!(words.first(), Some(&"struct" | &"class" | &"union")) || words.iter().any(|w| matches!(*w, "(" | "=")) {
            return None;
        }
        record_name(&words[1..])
    }

    /// True when `head` plus the statement ending here reads as an old-style
    /// definition in progress: `type name(a, b) type a; type b` where every
    /// declaration names a parameter.
    fn knr_declarations(&self, head: &[usize]) -> bool {
        let h = strip_prefix_noise(self.src, self.tokens, head);
        let Some(open) = h.iter().position(|&i| self.t(i) == "(") else { return false };
        let close = matching_paren(self.src, self.tokens, h, open);
        let words: Vec<&str> = h[..=close].iter().map(|&i| self.t(i)).collect();
        if words.last() != Some(&")") || open < 2 || !is_identifier(words[open - 1]) || CONTROL_KEYWORDS.contains(&words[open - 1]) {
            return false;
        }
        let params = &words[open + 1..close];
        let names: Vec<&str> = params.iter().step_by(2).copied().collect();
        let well_formed = !names.is_empty()
            && params.iter().enumerate().all(|(k, w)| if k % 2 == 0 { is_identifier(w) && !TYPE_WORDS.contains(w) } else { *w == "," })
            && params.len() % 2 == 1;
        if !well_formed {
            return false;
        }
        let rest = &h[close + 1..];
        let segments = rest.split(|&i| self.t(i) == ";");
        let decls: Vec<&[usize]> = segments.collect();
        !decls.is_empty()
            && decls.iter().all(|seg| {
                let dw: Vec<&str> = seg.iter().map(|&i| self.t(i)).collect();
                if dw.len() < 2 || dw.contains(&"=") {
                    return false;
                }
                split_top_level(&dw).into_iter().all(|part| {
                    let part = &dw[part];
                    declarator_name(part, false).is_some_and(|k| names.contains(&part[k]))
                })
            })
    }

    fn classify_statement(&mut self, head: &[usize], record: Option<usize>) {
        let h = strip_prefix_noise(self.src, self.tokens, head);
        if h.is_empty() {
            return;
        }
        let words: Vec<&str> = h.iter().map(|&i| self.t(i)).collect();
        if matches!(
            words[0],
            "typedef" | "using" | "friend" | "static_assert" | "_Static_assert" | "namespace" | "return" | "template" | "export" | "module" | "import"
        ) {
            return;
        }
        if words.len() <= 2 && matches!(words[0], "class" | "struct" | "union" | "enum") {
            return;
        }
        // After a struct body only the trailing declarators count.
        let start = h.iter().rposition(|i| self.record_ends.contains(i)).map_or(0, |p| p + 1);
        let decl = &h[start..];
        if decl.is_empty() {
            return;
        }
        let dwords: Vec<&str> = decl.iter().map(|&i| self.t(i)).collect();
        // A prototype or a macro invocation statement.
        let assign_at = top_level_position(&dwords, |w| w == "=");
        if let Some(p) = dwords.iter().position(|w| *w == "(") {
            let before_assign = assign_at.is_none_or(|a| p < a);
            let fn_pointer = matches!(dwords.get(p + 1), Some(&"*") | Some(&"&") | Some(&"^"));
            if before_assign && !fn_pointer {
                return;
            }
        }
        for (n, part) in split_top_level(&dwords).into_iter().enumerate() {
            let need_type = n == 0 && start == 0;
            let names = declarator_name(&dwords[part.clone()], need_type).map(|k| part.start + k);
            if let Some(k) = names {
                let name = dwords[k].to_string();
                let line = self.tokens[decl[k]].line;
                match record {
                    Some(r) => self.records[r].fields.push((name, line)),
                    None => self.globals.push((name, line)),
                }
            }
        }
    }
}

/// Drops leading `template<...>` clauses and `[[...]]` attributes.
fn strip_prefix_noise<'h>(src: &str, tokens: &[Token], head: &'h [usize]) -> &'h [usize] {
    let mut i = 0;
    loop {
        let w = |k: usize| head.get(k).map(|&t| tokens[t].text(src));
        if w(i) == Some("template") && w(i + 1) == Some("<") {
            let mut depth = 0i32;
            let mut k = i + 1;
            while k < head.len() {
                match w(k) {
                    Some("<") => depth += 1,
                    Some(">") => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                k += 1;
            }
            i = k + 1;
        } else if w(i) == Some("[") && w(i + 1) == Some("[") {
            let mut k = i + 2;
            while k + 1 < head.len() && !(w(k) == Some("]") && w(k + 1) == Some("]")) {
                k += 1;
            }
            i = k + 2;
        } else {
            break;
        }
    }
    &head[i.min(head.len())..]
}

fn has_top_level_assign(words: &[&str]) -> bool {
    top_level_position(words, |w| w == "=").is_some_and(|p| p == 0 || words[p - 1] != "operator")
}

fn top_level_position(words: &[&str], pred: impl Fn(&str) -> bool) -> Option<usize> {
    let mut depth = 0i32;
    for (k, w) in words.iter().enumerate() {
        match *w {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            _ if depth == 0 && pred(w) => return Some(k),
            _ => {}
        }
    }
    None
}

fn split_top_level(words: &[&str]) -> Vec<std::ops::Range<usize>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut angle = 0i32;
    let mut seen_assign = false;
    let mut start = 0;
    for (k, w) in words.iter().enumerate() {
        match *w {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            "<" if !seen_assign && depth == 0 => angle += 1,
            ">" if !seen_assign && depth == 0 && angle > 0 => angle -= 1,
            "=" if depth == 0 => seen_assign = true,
            "," if depth == 0 && angle == 0 => {
                parts.push(start..k);
                start = k + 1;
                seen_assign = false;
            }
            _ => {}
        }
    }
    parts.push(start..words.len());
    parts
}

fn is_identifier(w: &str) -> bool {
    w.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_' || c == '$')
        && w.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

/// Index of the declared name within one declarator. With `need_type` a
/// type must precede the name, so a bare `FOO;` declares nothing.
fn declarator_name(words: &[&str], need_type: bool) -> Option<usize> {
    if let Some(p) = words.iter().position(|w| *w == "(") {
        if matches!(words.get(p + 1), Some(&"*") | Some(&"&") | Some(&"^")) {
            return (p + 1..words.len()).take_while(|&k| words[k] != ")").filter(|&k| is_identifier(words[k]) && words[k] != "const").last();
        }
    }
    let stop = words
        .iter()
        .position(|w| matches!(*w, "=" | "[" | ":" | "(" | "{" | "}"))
        .unwrap_or(words.len());
    (0..stop)
        .rev()
        .find(|&k| is_identifier(words[k]) && !TYPE_WORDS.contains(&words[k]) && !ATTRIBUTE_CALLS.contains(&words[k]))
        .filter(|&k| !need_type || k > 0)
}

fn record_name(after_kw: &[&str]) -> Option<String> {
    let mut end = after_kw.len();
    for (k, w) in after_kw.iter().enumerate() {
        if *w == ":" {
            end = k;
            break;
        }
    }
    let mut skip_depth = 0i32;
    let mut name = None;
    for (k, w) in after_kw[..end].iter().enumerate() {
        match *w {
            "(" | "[" | "<" => skip_depth += 1,
            ")" | "]" | ">" => skip_depth -= 1,
            _ if skip_depth == 0
                && is_identifier(w)
                && !matches!(*w, "final" | "alignas" | "__attribute__" | "__declspec")
                && after_kw.get(k + 1) != Some(&"(") =>
            {
                name = Some((*w).to_string())
            }
            _ => {}
        }
    }
    name
}

/// Top-level `(` positions in `h` (indices into `h`), skipping nested groups.
fn top_level_paren_groups(src: &str, tokens: &[Token], h: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < h.len() {
        match tokens[h[k]].text(src) {
            "(" => {
                let close = matching_paren(src, tokens, h, k);
                out.push((k, close));
                k = close + 1;
            }
            "[" => {
                let mut depth = 0;
                while k < h.len() {
                    match tokens[h[k]].text(src) {
                        "[" => depth += 1,
                        "]" => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    k += 1;
                }
                k += 1;
            }
            _ => k += 1,
        }
    }
    out
}

fn matching_paren(src: &str, tokens: &[Token], h: &[usize], open: usize) -> usize {
    let mut depth = 0;
    for (k, &i) in h.iter().enumerate().skip(open) {
        match tokens[i].text(src) {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth == 0 {
                    return k;
                }
            }
            _ => {}
        }
    }
    h.len() - 1
}

pub(crate) struct Declarator {
    pub name: String,
    pub named: bool,
    /// Indices into the head slice.
    pub first: usize,
    pub declarator: Option<usize>,
    pub close_paren: usize,
    pub control: bool,
}

/// Picks the parameter list of a function header and the qualified name in
/// front of it. Headers without a return type (other than constructors and
/// qualified names) are taken to be macro-generated and left unnamed.
pub(crate) fn find_declarator(src: &str, tokens: &[Token], h: &[usize], in_class: bool, class_name: Option<&str>) -> Option<Declarator> {
    let w = |k: usize| tokens[h[k]].text(src);
    let groups = top_level_paren_groups(src, tokens, h);
    let mut candidates = Vec::new();
    for &(open, close) in &groups {
        if open == 0 {
            continue;
        }
        let prev = w(open - 1);
        let prev_kind = tokens[h[open - 1]].kind;
        // operator forms: operator==(...), operator()(...), operator new(...)
        if let Some(op) = (open.saturating_sub(3)..open).find(|&k| w(k) == "operator") {
            if prev == "operator" && close == open + 1 {
                // operator(): the parameter list is the next group.
                if let Some(&(o2, c2)) = groups.iter().find(|g| g.0 == close + 1) {
                    candidates.push((op, o2, c2, "operator()".to_string()));
                }
                continue;
            }
            let name: String = (op..open).map(w).collect::<Vec<_>>().join("");
            candidates.push((op, open, close, fix_operator_name(&name)));
            continue;
        }
        // A function returning a function pointer: `int (*name(args))(sig)`.
        if matches!(w(open + 1), "*" | "&" | "^") && groups.iter().any(|g| g.0 == close + 1) {
            if let Some(k) = (open + 2..close).find(|&k| tokens[h[k]].kind == TokKind::Ident && w(k + 1) == "(") {
                let inner_close = matching_paren(src, tokens, h, k + 1);
                candidates.push((k, k + 1, inner_close, w(k).to_string()));
                continue;
            }
        }
        // Explicit template arguments: `max_of<int>(...)`.
        if prev == ">" {
            let mut depth = 0;
            let mut k = open - 1;
            let lt = loop {
                match w(k) {
                    ">" => depth += 1,
                    "<" => {
                        depth -= 1;
                        if depth == 0 {
                            break Some(k);
                        }
                    }
                    "(" | ")" | ";" | "{" | "}" => break None,
                    _ => {}
                }
                if k == 0 {
                    break None;
                }
                k -= 1;
            };
            if let Some(lt) = lt.filter(|&lt| lt > 0 && tokens[h[lt - 1]].kind == TokKind::Ident && w(lt - 1) != "template") {
                candidates.push((lt - 1, open, close, w(lt - 1).to_string()));
            }
            continue;
        }
        if prev_kind != TokKind::Ident || ATTRIBUTE_CALLS.contains(&prev) {
            continue;
        }
        candidates.push((open - 1, open, close, prev.to_string()));
    }
    if candidates.is_empty() {
        return None;
    }
    let mut chosen = None;
    for (idx, &(name_at, open, close, ref base)) in candidates.iter().enumerate() {
        let (first_of_chain, name) = qualify_backwards(&w, name_at, base.clone());
        let qualified = name.contains("::");
        let has_type = (0..first_of_chain).any(|k| {
            let t = w(k);
            !ATTRIBUTE_CALLS.contains(&t) && !matches!(t, "(" | ")")
        }) && !prefix_is_only_attributes(&w, first_of_chain);
        let is_ctor = in_class && (class_name.is_some_and(|c| c.rsplit("::").next() == Some(base.as_str())) || name.starts_with('~'));
        if has_type || qualified || is_ctor {
            chosen = Some((idx, first_of_chain, name, open, close, true));
            break;
        }
    }
    let (idx, first_of_chain, name, _open, close, named) = match chosen {
        Some(c) => c,
        None => {
            let (name_at, _open, close, base) = candidates[0].clone();
            let (first_of_chain, name) = qualify_backwards(&w, name_at, base);
            (0, first_of_chain, name, 0, close, false)
        }
    };
    // A macro invocation in front of the chosen header is not part of it.
    let first = if idx > 0 {
        let prev_close = candidates[idx - 1].2;
        if prev_close < first_of_chain {
            prev_close + 1
        } else {
            0
        }
    } else {
        0
    };
    let base = name.rsplit("::").next().unwrap_or(&name).trim_start_matches('~').to_string();
    let control = CONTROL_KEYWORDS.contains(&base.as_str()) && !name.contains("::");
    let declarator = (0..h.len()).find(|&k| k >= first_of_chain && tokens[h[k]].kind == TokKind::Ident && w(k) == base);
    let name = if named { name } else { format!("<unnamed@{}>", tokens[h[first]].line) };
    Some(Declarator { name, named, first, declarator, close_paren: close, control })
}

fn fix_operator_name(name: &str) -> String {
    match name.strip_prefix("operator") {
        Some(rest) if rest.chars().next().is_some_and(|c| c.is_alphabetic()) => format!("operator {rest}"),
        _ => name.to_string(),
    }
}

fn prefix_is_only_attributes<'a>(w: &impl Fn(usize) -> &'a str, end: usize) -> bool {
    let mut k = 0;
    let mut only = true;
    while k < end {
        let t = w(k);
        if ATTRIBUTE_CALLS.contains(&t) {
            // skip its parenthesised argument
            if k + 1 < end && w(k + 1) == "(" {
                let mut depth = 0;
                k += 1;
                while k < end {
                    match w(k) {
                        "(" => depth += 1,
                        ")" => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    k += 1;
                }
            }
            k += 1;
            continue;
        }
        only = false;
        break;
    }
    only
}

/// Extends a name leftwards over `A::`, `A<T>::` and `~`. Returns the head
/// index of the chain's first token and the qualified name.
fn qualify_backwards<'a>(w: &impl Fn(usize) -> &'a str, name_at: usize, base: String) -> (usize, String) {
    let mut parts = vec![base];
    let mut k = name_at;
    if k > 0 && w(k - 1) == "~" {
        k -= 1;
        parts[0] = format!("~{}", parts[0]);
    }
    while k >= 2 && w(k - 1) == "::" {
        let mut j = k - 2;
        if w(j) == ">" {
            let mut depth = 0;
            loop {
                match w(j) {
                    ">" => depth += 1,
                    "<" => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                if j == 0 {
                    break;
                }
                j -= 1;
            }
            if j == 0 {
                break;
            }
            j -= 1;
        }
        if !is_identifier(w(j)) {
            break;
        }
        parts.push(w(j).to_string());
        k = j;
    }
    if k >= 1 && w(k - 1) == "::" {
        k -= 1;
    }
    parts.reverse();
    (k, parts.join("::"))
}
