//! Syntax-level analysis of C/C++ sources.
//!
//! [`place_lines`] maps changed lines to their enclosing function,
//! [`find_call_sites`] indexes call expressions of a function name across a
//! checked-out tree, and [`extract_key_variables`] picks the identifiers whose
//! history is worth tracing.

mod calls;
pub mod lexer;
pub mod structure;
mod variables;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Language;

pub use calls::{find_call_sites, find_call_sites_in_source, CallSiteContext, CallSiteScan, CONTEXT_RADIUS};
pub use structure::line_count;
pub use variables::{extract_key_variables, KeyVariable, KeyVariableKind, KeyVariables};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzeError {
    #[error("{0:?} sources are not analyzed")]
    UnsupportedLanguage(Language),
    #[error("line {line} is outside the file (1..={len})")]
    LineOutOfBounds { line: u32, len: u32 },
    #[error("no function name found; using {placeholder}")]
    NameNotFound { placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionSpan {
    pub name: String,
    pub start_line: u32,
    pub end_line: u32,
    pub body_text: String,
    pub file: String,
}

impl FunctionSpan {
    /// Final component of a qualified name: `A::f` calls look like `f(`.
    pub fn short_name(&self) -> &str {
        self.name.rsplit("::").next().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "placement", rename_all = "snake_case")]
pub enum Placement {
    InFunction { function: FunctionSpan },
    FileScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinePlacement {
    pub line: u32,
    #[serde(flatten)]
    pub placement: Placement,
}

impl LinePlacement {
    pub fn function(&self) -> Option<&FunctionSpan> {
        match &self.placement {
            Placement::InFunction { function } => Some(function),
            Placement::FileScope => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placements {
    pub placements: Vec<LinePlacement>,
    /// Set when the file could not be structured; every line is then placed
    /// at file scope.
    pub warning: Option<String>,
}

pub(crate) fn source_lines(source: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = source.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    if source.ends_with('\n') {
        lines.pop();
    }
    lines
}

pub(crate) fn span_of(
    def: &structure::FunctionDef,
    lines: &[&str],
    file: &str,
) -> FunctionSpan {
    let body_text = lines[(def.start_line - 1) as usize..def.end_line as usize].join("\n");
    FunctionSpan { name: def.name.clone(), start_line: def.start_line, end_line: def.end_line, body_text, file: file.to_string() }
}

/// Innermost function whose span covers `line`, unless the line belongs to a
/// preprocessor directive.
pub(crate) fn enclosing_function(st: &structure::FileStructure, line: u32) -> Option<&structure::FunctionDef> {
    if st.directive_lines.iter().any(|&(a, b)| a <= line && line <= b) {
        return None;
    }
    st.functions
        .iter()
        .filter(|f| f.start_line <= line && line <= f.end_line)
        .min_by_key(|f| f.end_line - f.start_line)
}

pub fn place_lines(path: &str, source: &str, language: Language, lines: &[u32]) -> Result<Placements, AnalyzeError> {
    if !language.is_c_family() {
        return Err(AnalyzeError::UnsupportedLanguage(language));
    }
    let len = line_count(source);
    if let Some(&bad) = lines.iter().find(|&&l| l == 0 || l > len) {
        return Err(AnalyzeError::LineOutOfBounds { line: bad, len });
    }
    let st = match structure::scan(source) {
        Ok(st) => st,
        Err(e) => {
            return Ok(Placements {
                placements: lines.iter().map(|&line| LinePlacement { line, placement: Placement::FileScope }).collect(),
                warning: Some(format!("{path}: could not structure file at line {}: {}", e.line, e.reason)),
            })
        }
    };
    let text_lines = source_lines(source);
    let placements = lines
        .iter()
        .map(|&line| LinePlacement {
            line,
            placement: match enclosing_function(&st, line) {
                Some(def) => Placement::InFunction { function: span_of(def, &text_lines, path) },
                None => Placement::FileScope,
            },
        })
        .collect();
    Ok(Placements { placements, warning: None })
}

/// Name declared by a function header such as
/// `static int avi_read(AVI *AVI, char *buf, int n)`.
pub fn capture_function_name(header: &str, language: Language) -> Result<String, AnalyzeError> {
    if !language.is_c_family() {
        return Err(AnalyzeError::UnsupportedLanguage(language));
    }
    let header = header.split('{').next().unwrap_or(header);
    let lexed = lexer::lex(header);
    let idx: Vec<usize> = (0..lexed.tokens.len())
        .filter(|&i| lexed.tokens[i].kind != lexer::TokKind::Directive)
        .collect();
    let first_line = idx.first().map_or(1, |&i| lexed.tokens[i].line);
    let unnamed = || AnalyzeError::NameNotFound { placeholder: format!("<unnamed@{first_line}>") };
    match structure::find_declarator(header, &lexed.tokens, &idx, false, None) {
        Some(d) if d.named && !d.control => Ok(d.name),
        _ => Err(unnamed()),
    }
}
