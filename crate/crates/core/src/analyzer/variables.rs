use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lexer::{lex, TokKind, Token};
use super::structure::{self, FileStructure, CONTROL_KEYWORDS};
use super::{enclosing_function, AnalyzeError};
use crate::diff::ChangeLines;
use crate::model::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyVariableKind {
    Assigned,
    DeclaredField,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyVariable {
    pub identifier: String,
    pub kind: KeyVariableKind,
    /// Line in the parent-version file whose history is traced for this
    /// variable.
    pub source_line: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyVariables {
    pub variables: Vec<KeyVariable>,
    /// The parent file could not be structured; only assignment targets
    /// were extracted, from text.
    pub degraded: bool,
}

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

#[derive(Debug, PartialEq, Eq)]
struct Target {
    ident: String,
    member: bool,
    declared: bool,
}

/// Key variables of a change: assignment targets reached through a member
/// access, fields declared in modified lines, and file-scope variables the
/// modified lines declare, assign or read. Plain locals and parameters are
/// left out.
pub fn extract_key_variables(changes: &ChangeLines, source_at_parent: &str, language: Language) -> Result<KeyVariables, AnalyzeError> {
    if !language.is_c_family() {
        return Err(AnalyzeError::UnsupportedLanguage(language));
    }
    let mut out = Collector::default();
    let st = match structure::scan(source_at_parent) {
        Ok(st) => st,
        Err(_) => return Ok(degraded(changes, source_at_parent)),
    };
    let globals: HashMap<&str, u32> = st.globals.iter().rev().map(|(n, l)| (n.as_str(), *l)).collect();

    for d in &changes.deleted {
        let line = d.old_lineno;
        let in_function = enclosing_function(&st, line).is_some();
        let record = st.records.iter().find(|r| r.start_line <= line && line <= r.end_line);
        if !in_function {
            if let Some(r) = record {
                for (name, _) in r.fields.iter().filter(|(_, l)| *l == line) {
                    out.push(name, KeyVariableKind::DeclaredField, line);
                }
            } else {
                for (name, _) in st.globals.iter().filter(|(_, l)| *l == line) {
                    out.push(name, KeyVariableKind::Global, line);
                }
            }
        }
        for t in assignment_targets(&d.text) {
            if t.member {
                out.push(&t.ident, KeyVariableKind::Assigned, line);
            } else if !(in_function && t.declared) && globals.contains_key(t.ident.as_str()) {
                out.push(&t.ident, KeyVariableKind::Global, line);
            }
        }
        for ident in identifiers(&d.text) {
            if globals.contains_key(ident.as_str()) && !(in_function && declares_local(&d.text, &ident)) {
                out.push(&ident, KeyVariableKind::Global, line);
            }
        }
    }

    for a in &changes.added {
        for t in assignment_targets(&a.text) {
            if t.member {
                if let Some(line) = first_use(&st, source_at_parent, &t.ident) {
                    out.push(&t.ident, KeyVariableKind::Assigned, line);
                }
            } else if let Some(&line) = globals.get(t.ident.as_str()) {
                if !t.declared {
                    out.push(&t.ident, KeyVariableKind::Global, line);
                }
            }
        }
        for ident in identifiers(&a.text) {
            if let Some(&line) = globals.get(ident.as_str()) {
                if !declares_local(&a.text, &ident) {
                    out.push(&ident, KeyVariableKind::Global, line);
                }
            }
        }
    }
    Ok(KeyVariables { variables: out.vars, degraded: false })
}

#[derive(Default)]
struct Collector {
    vars: Vec<KeyVariable>,
}

impl Collector {
    fn push(&mut self, ident: &str, kind: KeyVariableKind, line: u32) {
        if !self.vars.iter().any(|v| v.identifier == ident && v.kind == kind) {
            self.vars.push(KeyVariable { identifier: ident.to_string(), kind, source_line: line });
        }
    }
}

fn degraded(changes: &ChangeLines, source: &str) -> KeyVariables {
    let mut out = Collector::default();
    let lines: Vec<&str> = source.lines().collect();
    for d in &changes.deleted {
        for t in assignment_targets(&d.text).into_iter().filter(|t| !t.declared) {
            out.push(&t.ident, KeyVariableKind::Assigned, d.old_lineno);
        }
    }
    for a in &changes.added {
        for t in assignment_targets(&a.text).into_iter().filter(|t| !t.declared) {
            let word = regex::Regex::new(&format!(r"\b{}\b", regex::escape(&t.ident))).expect("escaped pattern");
            if let Some(n) = lines.iter().position(|l| word.is_match(l)) {
                out.push(&t.ident, KeyVariableKind::Assigned, n as u32 + 1);
            }
        }
    }
    KeyVariables { variables: out.vars, degraded: true }
}

fn first_use(st: &FileStructure, src: &str, ident: &str) -> Option<u32> {
    st.tokens.iter().find(|t| t.kind == TokKind::Ident && t.text(src) == ident).map(|t| t.line)
}

fn identifiers(line: &str) -> Vec<String> {
    let toks = lex(line).tokens;
    let mut out: Vec<String> = Vec::new();
    for (k, t) in toks.iter().enumerate() {
        if t.kind != TokKind::Ident {
            continue;
        }
        let after_member = k > 0 && matches!(toks[k - 1].text(line), "." | "->");
        let w = t.text(line).to_string();
        if !after_member && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn declares_local(line: &str, ident: &str) -> bool {
    assignment_targets(line).iter().any(|t| t.ident == ident && t.declared)
}

fn assignment_targets(line: &str) -> Vec<Target> {
    let toks = lex(line).tokens;
    let text = |k: usize| toks[k].text(line);
    let mut out = Vec::new();
    for j in 0..toks.len() {
        let op = text(j);
        if ASSIGN_OPS.contains(&op) {
            if j > 0 && text(j - 1) == "operator" {
                continue;
            }
            if let Some(t) = target_before(line, &toks, j) {
                out.push(t);
            }
        } else if op == "++" || op == "--" {
            let postfix = j > 0 && (toks[j - 1].kind == TokKind::Ident || matches!(text(j - 1), "]" | ")"));
            if postfix {
                if let Some(t) = target_before(line, &toks, j) {
                    out.push(t);
                }
            } else if let Some(t) = target_after(line, &toks, j) {
                out.push(t);
            }
        }
    }
    out
}

fn target_before(src: &str, toks: &[Token], op: usize) -> Option<Target> {
    let text = |k: usize| toks[k].text(src);
    let mut k = op.checked_sub(1)?;
    while text(k) == "]" {
        let mut depth = 0;
        loop {
            match text(k) {
                "]" => depth += 1,
                "[" => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            k = k.checked_sub(1)?;
        }
        k = k.checked_sub(1)?;
    }
    if toks[k].kind != TokKind::Ident {
        return None;
    }
    let member = k > 0 && matches!(text(k - 1), "." | "->");
    let declared = !member && {
        let mut p = k;
        while p > 0 && matches!(text(p - 1), "*" | "&" | "const" | "volatile") {
            p -= 1;
        }
        p > 0 && (toks[p - 1].kind == TokKind::Ident && !CONTROL_KEYWORDS.contains(&text(p - 1)) || text(p - 1) == ">")
    };
    Some(Target { ident: text(k).to_string(), member, declared })
}

fn target_after(src: &str, toks: &[Token], op: usize) -> Option<Target> {
    let text = |k: usize| toks[k].text(src);
    let mut k = op + 1;
    if k >= toks.len() || toks[k].kind != TokKind::Ident {
        return None;
    }
    let mut member = false;
    while k + 2 < toks.len() && matches!(text(k + 1), "." | "->") && toks[k + 2].kind == TokKind::Ident {
        k += 2;
        member = true;
    }
    Some(Target { ident: text(k).to_string(), member, declared: false })
}
