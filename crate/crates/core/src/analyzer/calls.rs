use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::lexer::{directive_name, lex, TokKind, Token};
use super::structure::{self, TokCtx, CONTROL_KEYWORDS, TYPE_WORDS};
use super::{source_lines, span_of, FunctionSpan};
use crate::model::detect_language;

/// Lines of context kept on each side of a call.
pub const CONTEXT_RADIUS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSiteContext {
    pub callee: String,
    pub file: String,
    pub line: u32,
    pub caller: Option<FunctionSpan>,
    pub context_lines: Vec<String>,
    /// Found by the plain-text fallback because the file could not be
    /// structured.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub textual: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSiteScan {
    pub callee: String,
    pub sites: Vec<CallSiteContext>,
    pub degraded_files: Vec<String>,
    /// Places where the name occurs without being called (callbacks,
    /// shadowing variables).
    pub non_call_mentions: Vec<(String, u32)>,
}

/// Scans every C/C++ file under `root` for calls whose callee's final name
/// component is `callee`. Results are ordered by file path, then line.
pub fn find_call_sites(root: &Path, callee: &str) -> CallSiteScan {
    let mut files: Vec<(String, std::path::PathBuf)> = WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git")
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| {
            let rel = e.path().strip_prefix(root).ok()?.to_string_lossy().replace('\\', "/");
            detect_language(&rel).is_c_family().then(|| (rel, e.path().to_path_buf()))
        })
        .collect();
    files.sort();
    let per_file: Vec<FileHits> = files
        .par_iter()
        .map(|(rel, abs)| {
            let bytes = std::fs::read(abs).unwrap_or_default();
            find_call_sites_in_source(rel, &String::from_utf8_lossy(&bytes), callee)
        })
        .collect();
    let mut scan = CallSiteScan { callee: callee.to_string(), ..Default::default() };
    for (rel, hits) in files.iter().zip(per_file) {
        if hits.degraded {
            scan.degraded_files.push(rel.0.clone());
        }
        scan.sites.extend(hits.sites);
        scan.non_call_mentions.extend(hits.mentions.into_iter().map(|l| (rel.0.clone(), l)));
    }
    scan
}

#[derive(Debug, Default)]
pub struct FileHits {
    pub sites: Vec<CallSiteContext>,
    pub mentions: Vec<u32>,
    pub degraded: bool,
}

pub fn find_call_sites_in_source(path: &str, source: &str, callee: &str) -> FileHits {
    let lines = source_lines(source);
    let st = match structure::scan(source) {
        Ok(st) => st,
        Err(_) => return textual_scan(path, &lines, callee),
    };
    let mut call_lines: Vec<(u32, Option<usize>)> = Vec::new();
    let mut mentions = Vec::new();
    let declarators: Vec<usize> = st.functions.iter().filter_map(|f| f.declarator).collect();
    let toks = &st.tokens;
    for (i, tok) in toks.iter().enumerate() {
        match st.ctx[i] {
            TokCtx::Inactive => continue,
            TokCtx::Directive => {
                let text = tok.text(source);
                if directive_name(text) == "define" {
                    for line in calls_in_define(text, callee) {
                        call_lines.push((tok.line + line - 1, None));
                    }
                }
                continue;
            }
            _ => {}
        }
        if tok.kind != TokKind::Ident || tok.text(source) != callee {
            continue;
        }
        let next = next_code(&st.ctx, i);
        if next.map(|n| toks[n].text(source)) != Some("(") {
            let member_of_other = prev_code(&st.ctx, i).is_some_and(|p| matches!(toks[p].text(source), "." | "->"));
            if !member_of_other {
                mentions.push(tok.line);
            }
            continue;
        }
        if declarators.contains(&i) {
            continue;
        }
        if is_call(source, toks, &st.ctx, i) {
            let caller = match st.ctx[i] {
                TokCtx::Body(f) => Some(f),
                _ => None,
            };
            call_lines.push((tok.line, caller));
        }
    }
    call_lines.sort();
    call_lines.dedup_by_key(|c| c.0);
    let sites = call_lines
        .into_iter()
        .map(|(line, caller)| CallSiteContext {
            callee: callee.to_string(),
            file: path.to_string(),
            line,
            caller: caller.map(|f| span_of(&st.functions[f], &lines, path)),
            context_lines: context(&lines, line),
            textual: false,
        })
        .collect();
    mentions.dedup();
    FileHits { sites, mentions, degraded: false }
}

fn context(lines: &[&str], line: u32) -> Vec<String> {
    let lo = line.saturating_sub(CONTEXT_RADIUS).max(1);
    let hi = (line + CONTEXT_RADIUS).min(lines.len() as u32);
    (lo..=hi).map(|n| lines[(n - 1) as usize].to_string()).collect()
}

fn textual_scan(path: &str, lines: &[&str], callee: &str) -> FileHits {
    let pattern = regex::Regex::new(&format!(r"\b{}\s*\(", regex::escape(callee))).expect("escaped pattern");
    let sites = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| pattern.is_match(l))
        .map(|(n, _)| {
            let line = n as u32 + 1;
            CallSiteContext { callee: callee.to_string(), file: path.to_string(), line, caller: None, context_lines: context(lines, line), textual: true }
        })
        .collect();
    FileHits { sites, mentions: Vec::new(), degraded: true }
}

fn next_code(ctx: &[TokCtx], i: usize) -> Option<usize> {
    (i + 1..ctx.len()).find(|&k| !matches!(ctx[k], TokCtx::Inactive | TokCtx::Directive))
}

fn prev_code(ctx: &[TokCtx], i: usize) -> Option<usize> {
    (0..i).rev().find(|&k| !matches!(ctx[k], TokCtx::Inactive | TokCtx::Directive))
}

/// Decides whether `name(` at token `i` is a call rather than a declaration.
fn is_call(src: &str, toks: &[Token], ctx: &[TokCtx], i: usize) -> bool {
    let text = |k: usize| toks[k].text(src);
    let mut start = i;
    // Walk over a qualification chain: a::b::name
    while let Some(p) = prev_code(ctx, start) {
        match text(p) {
            "." | "->" => return true,
            "~" => return false,
            "::" => match prev_code(ctx, p) {
                Some(q) if toks[q].kind == TokKind::Ident => start = q,
                Some(q) if text(q) == ">" => {
                    // skip template arguments
                    let mut depth = 0;
                    let mut k = q;
                    loop {
                        match text(k) {
                            ">" => depth += 1,
                            "<" => {
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                            }
                            _ => {}
                        }
                        match prev_code(ctx, k) {
                            Some(n) => k = n,
                            None => return true,
                        }
                    }
                    match prev_code(ctx, k) {
                        Some(n) if toks[n].kind == TokKind::Ident => start = n,
                        _ => return true,
                    }
                }
                _ => {
                    start = p;
                    break;
                }
            },
            _ => break,
        }
    }
    let declarative = matches!(ctx[i], TokCtx::Decl { .. });
    let in_class = matches!(ctx[i], TokCtx::Decl { in_class: true });
    let Some(q) = prev_code(ctx, start) else { return true };
    let qt = text(q);
    if toks[q].kind == TokKind::Ident {
        return CONTROL_KEYWORDS.contains(&qt);
    }
    match qt {
        "*" | "&" | "&&" => {
            if declarative {
                return false;
            }
            match prev_code(ctx, q) {
                Some(r) => !TYPE_WORDS.contains(&text(r)),
                None => true,
            }
        }
        ">" => !declarative,
        ";" | "{" | "}" | ":" if in_class => false,
        _ => true,
    }
}

/// Lines (1-based within the directive) of calls inside a `#define` body.
fn calls_in_define(text: &str, callee: &str) -> Vec<u32> {
    let toks = lex(text.trim_start_matches('#')).tokens;
    let src = text.trim_start_matches('#');
    let mut out = Vec::new();
    // toks[0] is "define", toks[1] the macro name.
    for k in 2..toks.len() {
        if toks[k].kind == TokKind::Ident
            && toks[k].text(src) == callee
            && toks.get(k + 1).is_some_and(|n| n.text(src) == "(")
        {
            let prev = toks[k - 1];
            let prev_text = prev.text(src);
            let call = if prev.kind == TokKind::Ident { CONTROL_KEYWORDS.contains(&prev_text) } else { prev_text != "~" };
            if call {
                out.push(toks[k].line);
            }
        }
    }
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines_of(src: &str, name: &str) -> Vec<u32> {
        find_call_sites_in_source("t.c", src, name).sites.iter().map(|s| s.line).collect()
    }

    #[test]
    fn calls_versus_declarations() {
        let src = "\
int handler(int x);
int handler(int x)
{
  return x;
}
static void run(void)
{
  int y = handler(1);
  if (handler(2)) { y++; }
  ops->handler(3);
  /* handler(4) */
  puts(\"handler(5)\");
  return handler(6);
}
";
        assert_eq!(lines_of(src, "handler"), vec![8, 9, 10, 13]);
        let s = &find_call_sites_in_source("t.c", src, "handler").sites[0];
        assert_eq!(s.caller.as_ref().unwrap().name, "run");
        assert!(s.context_lines.len() <= 21);
        assert!(s.context_lines.contains(&"  int y = handler(1);".to_string()));
    }

    #[test]
    fn variable_named_like_function_is_not_a_call() {
        let src = "void f(void)\n{\n  int handler = 0;\n  handler = 2;\n  register_cb(handler);\n  handler(3);\n}\n";
        let hits = find_call_sites_in_source("t.c", src, "handler");
        assert_eq!(hits.sites.iter().map(|s| s.line).collect::<Vec<_>>(), vec![6]);
        assert_eq!(hits.mentions, vec![3, 4, 5]);
    }

    #[test]
    fn macro_bodies_and_file_scope() {
        let src = "#define WRAP(x) \\\n  do { work(x); } while (0)\n#define work(x) x\nint table = work(1);\n";
        assert_eq!(lines_of(src, "work"), vec![2, 4]);
    }

    #[test]
    fn qualified_and_member_calls() {
        let src = "void A::go() {\n  ns::go(1);\n  this->go();\n  std::vector<int>::go();\n}\n";
        assert_eq!(lines_of(src, "go"), vec![2, 3, 4]);
    }

    #[test]
    fn unparseable_file_falls_back_to_text() {
        let hits = find_call_sites_in_source("t.c", "void f() {\n  go(1);\n", "go");
        assert!(hits.degraded);
        assert_eq!(hits.sites[0].line, 2);
        assert!(hits.sites[0].textual);
    }
}
