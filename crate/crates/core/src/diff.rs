//! Unified-diff parsing, change-line extraction and context extension.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{detect_language, ContextExtensionPolicy, FileDiff, FileStatus, Hunk, LineChange, LineKind};

static HUNK_HEADER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("malformed diff at byte {offset}: {reason}")]
    MalformedDiff { offset: usize, reason: String },
}

fn malformed(offset: usize, reason: impl Into<String>) -> DiffError {
    DiffError::MalformedDiff { offset, reason: reason.into() }
}

/// One physical line of input with its starting byte offset. `text` excludes
/// the trailing `\n` but keeps any `\r`.
struct RawLine<'a> {
    offset: usize,
    end: usize,
    text: &'a str,
}

fn raw_lines(text: &str) -> Vec<RawLine<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in text.split_inclusive('\n') {
        out.push(RawLine { offset, end: offset + piece.len(), text: piece.strip_suffix('\n').unwrap_or(piece) });
        offset += piece.len();
    }
    out
}

#[derive(Default)]
struct PendingFile {
    old_path: Option<String>,
    new_path: Option<String>,
    git_old: Option<String>,
    git_new: Option<String>,
    new_file: bool,
    deleted_file: bool,
    renamed: bool,
    binary: bool,
    hunks: Vec<Hunk>,
}

impl PendingFile {
    fn finish(self) -> FileDiff {
        let old = self.old_path.or(if self.new_file { None } else { self.git_old });
        let new = self.new_path.or(if self.deleted_file { None } else { self.git_new });
        let status = if self.new_file || (old.is_none() && new.is_some()) {
            FileStatus::Added
        } else if self.deleted_file || (new.is_none() && old.is_some()) {
            FileStatus::Deleted
        } else if self.renamed || old != new {
            FileStatus::Renamed
        } else {
            FileStatus::Modified
        };
        let (old_path, new_path) = match status {
            FileStatus::Added => (None, new),
            FileStatus::Deleted => (old, None),
            _ => (old, new),
        };
        let language = detect_language(new_path.as_deref().or(old_path.as_deref()).unwrap_or(""));
        FileDiff { old_path, new_path, status, hunks: self.hunks, language, binary: self.binary }
    }
}

fn strip_side_prefix(path: &str) -> Option<String> {
    let path = path.split('\t').next().unwrap_or(path).trim_end_matches('\r');
    if path == "/dev/null" {
        return None;
    }
    let p = path.strip_prefix("a/").or_else(|| path.strip_prefix("b/")).unwrap_or(path);
    Some(p.to_string())
}

fn git_header_paths(rest: &str) -> (Option<String>, Option<String>) {
    // "a/x b/y"; paths with spaces are split on the last " b/".
    match rest.rfind(" b/") {
        Some(i) => (strip_side_prefix(&rest[..i]), strip_side_prefix(&rest[i + 1..])),
        None => (None, None),
    }
}

/// Parses the output of `git diff`/`git show` or plain `diff -u`.
pub fn parse_unified_diff(text: &str) -> Result<Vec<FileDiff>, DiffError> {
    let lines = raw_lines(text);
    let mut files = Vec::new();
    let mut current: Option<PendingFile> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = &lines[i];
        let t = line.text;
        if let Some(rest) = t.strip_prefix("diff --git ") {
            if let Some(f) = current.take() {
                files.push(f.finish());
            }
            let (git_old, git_new) = git_header_paths(rest);
            current = Some(PendingFile { git_old, git_new, ..Default::default() });
            i += 1;
        } else if t.starts_with("--- ") && lines.get(i + 1).is_some_and(|n| n.text.starts_with("+++ ")) {
            let starts_new = current.as_ref().is_none_or(|f| !f.hunks.is_empty() || f.old_path.is_some());
            if starts_new {
                if let Some(f) = current.take() {
                    files.push(f.finish());
                }
                current = Some(PendingFile::default());
            }
            let f = current.as_mut().unwrap();
            f.old_path = strip_side_prefix(&t[4..]);
            f.new_path = strip_side_prefix(&lines[i + 1].text[4..]);
            if f.old_path.is_none() {
                f.new_file = true;
            }
            if f.new_path.is_none() {
                f.deleted_file = true;
            }
            i += 2;
        } else if t.starts_with("@@ ") {
            let f = current.as_mut().ok_or_else(|| malformed(line.offset, "hunk outside of a file section"))?;
            let (hunk, next) = parse_hunk_at(&lines, i)?;
            f.hunks.push(hunk);
            i = next;
        } else if let Some(f) = current.as_mut() {
            if t.starts_with("new file mode") {
                f.new_file = true;
            } else if t.starts_with("deleted file mode") {
                f.deleted_file = true;
            } else if let Some(p) = t.strip_prefix("rename from ") {
                f.renamed = true;
                f.git_old = Some(p.to_string());
            } else if let Some(p) = t.strip_prefix("rename to ") {
                f.renamed = true;
                f.git_new = Some(p.to_string());
            } else if t.starts_with("Binary files ") || t == "GIT binary patch" {
                f.binary = true;
            }
            i += 1;
        } else {
            // Preamble before the first file (commit headers, mail text).
            i += 1;
        }
    }
    if let Some(f) = current.take() {
        files.push(f.finish());
    }
    Ok(files)
}

/// Parses a bare sequence of hunks, as carried in a forge `patch` field.
pub fn parse_hunks(text: &str) -> Result<Vec<Hunk>, DiffError> {
    let lines = raw_lines(text);
    let mut hunks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].text.starts_with("@@ ") {
            let (hunk, next) = parse_hunk_at(&lines, i)?;
            hunks.push(hunk);
            i = next;
        } else if lines[i].text.is_empty() && i + 1 == lines.len() {
            i += 1;
        } else {
            return Err(malformed(lines[i].offset, "expected a hunk header"));
        }
    }
    Ok(hunks)
}

fn parse_hunk_at(lines: &[RawLine<'_>], at: usize) -> Result<(Hunk, usize), DiffError> {
    let header = &lines[at];
    let caps = HUNK_HEADER
        .captures(header.text)
        .ok_or_else(|| malformed(header.offset, format!("bad hunk header {:?}", header.text)))?;
    let num = |idx: usize, default: u32| -> Result<u32, DiffError> {
        caps.get(idx)
            .map(|m| m.as_str().parse::<u32>().map_err(|_| malformed(header.offset, "hunk number overflow")))
            .unwrap_or(Ok(default))
    };
    let mut hunk = Hunk {
        old_start: num(1, 0)?,
        old_len: num(2, 1)?,
        new_start: num(3, 0)?,
        new_len: num(4, 1)?,
        section: caps.get(5).map_or(String::new(), |m| m.as_str().to_string()),
        lines: Vec::new(),
    };
    let (mut old_left, mut new_left) = (hunk.old_len, hunk.new_len);
    let (mut old_no, mut new_no) = (hunk.old_start, hunk.new_start);
    let mut i = at + 1;
    while old_left > 0 || new_left > 0 {
        let Some(line) = lines.get(i) else {
            return Err(malformed(
                lines.last().map_or(0, |l| l.end),
                format!("hunk ended early: {old_left} old and {new_left} new lines missing"),
            ));
        };
        let t = line.text;
        let (kind, body) = match t.as_bytes().first() {
            Some(b' ') => (LineKind::Context, &t[1..]),
            Some(b'-') => (LineKind::Deleted, &t[1..]),
            Some(b'+') => (LineKind::Added, &t[1..]),
            // Some tools drop the space on empty context lines.
            None => (LineKind::Context, ""),
            Some(b'\\') => {
                mark_no_newline(&mut hunk, line.offset)?;
                i += 1;
                continue;
            }
            _ => return Err(malformed(line.offset, format!("unexpected line in hunk: {t:?}"))),
        };
        let change = match kind {
            LineKind::Context => {
                if old_left == 0 || new_left == 0 {
                    return Err(malformed(line.offset, "context line exceeds hunk counts"));
                }
                old_left -= 1;
                new_left -= 1;
                old_no += 1;
                new_no += 1;
                LineChange { kind, text: body.to_string(), old_lineno: Some(old_no - 1), new_lineno: Some(new_no - 1), no_newline: false }
            }
            LineKind::Deleted => {
                if old_left == 0 {
                    return Err(malformed(line.offset, "deleted line exceeds old count"));
                }
                old_left -= 1;
                old_no += 1;
                LineChange { kind, text: body.to_string(), old_lineno: Some(old_no - 1), new_lineno: None, no_newline: false }
            }
            LineKind::Added => {
                if new_left == 0 {
                    return Err(malformed(line.offset, "added line exceeds new count"));
                }
                new_left -= 1;
                new_no += 1;
                LineChange { kind, text: body.to_string(), old_lineno: None, new_lineno: Some(new_no - 1), no_newline: false }
            }
        };
        hunk.lines.push(change);
        i += 1;
    }
    if let Some(line) = lines.get(i) {
        if line.text.starts_with('\\') {
            mark_no_newline(&mut hunk, line.offset)?;
            i += 1;
        }
    }
    Ok((hunk, i))
}

fn mark_no_newline(hunk: &mut Hunk, offset: usize) -> Result<(), DiffError> {
    let last = hunk.lines.last_mut().ok_or_else(|| malformed(offset, "no-newline marker before any line"))?;
    last.no_newline = true;
    Ok(())
}

fn fmt_range(start: u32, len: u32) -> String {
    if len == 1 {
        start.to_string()
    } else {
        format!("{start},{len}")
    }
}

pub fn hunk_header(h: &Hunk) -> String {
    format!("@@ -{} +{} @@{}", fmt_range(h.old_start, h.old_len), fmt_range(h.new_start, h.new_len), h.section)
}

/// Header plus body, newline-terminated, in the same form git prints.
pub fn serialize_hunk(h: &Hunk) -> String {
    let mut out = hunk_header(h);
    out.push('\n');
    for l in &h.lines {
        out.push(match l.kind {
            LineKind::Context => ' ',
            LineKind::Added => '+',
            LineKind::Deleted => '-',
        });
        out.push_str(&l.text);
        out.push('\n');
        if l.no_newline {
            out.push_str("\\ No newline at end of file\n");
        }
    }
    out
}

/// Renders a file diff in `--- a/x` / `+++ b/x` form for prompts.
pub fn serialize_file_diff(f: &FileDiff) -> String {
    let old = f.old_path.as_deref().map_or("/dev/null".to_string(), |p| format!("a/{p}"));
    let new = f.new_path.as_deref().map_or("/dev/null".to_string(), |p| format!("b/{p}"));
    let mut out = format!("--- {old}\n+++ {new}\n");
    if f.binary {
        out.push_str("Binary file changed\n");
    }
    for h in &f.hunks {
        out.push_str(&serialize_hunk(h));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletedLine {
    pub old_lineno: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedLine {
    pub new_lineno: u32,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeLines {
    pub deleted: Vec<DeletedLine>,
    pub added: Vec<AddedLine>,
}

impl ChangeLines {
    pub fn is_empty(&self) -> bool {
        self.deleted.is_empty() && self.added.is_empty()
    }
}

pub fn extract_change_lines(diff: &FileDiff) -> ChangeLines {
    let mut out = ChangeLines::default();
    for l in diff.hunks.iter().flat_map(|h| &h.lines) {
        match (l.kind, l.old_lineno, l.new_lineno) {
            (LineKind::Deleted, Some(n), _) => out.deleted.push(DeletedLine { old_lineno: n, text: l.text.clone() }),
            (LineKind::Added, _, Some(n)) => out.added.push(AddedLine { new_lineno: n, text: l.text.clone() }),
            _ => {}
        }
    }
    out
}

/// Old-side line an added line sits after, or 1 at the start of the file.
/// Used to place insertions in the parent version.
pub fn insertion_anchor(hunk: &Hunk, index: usize) -> u32 {
    hunk.lines[..index]
        .iter()
        .rev()
        .find_map(|l| l.old_lineno)
        .unwrap_or(hunk.old_start)
        .max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Old,
    New,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedHunk {
    pub base: Hunk,
    pub extend_before: u32,
    pub extend_after: u32,
    pub clamped_to_function: bool,
    /// Inclusive range in the file the extension was resolved against,
    /// `[0, 0]` when that file is empty.
    pub resolved_old_range: (u32, u32),
    #[serde(default = "default_side")]
    pub side: Side,
}

fn default_side() -> Side {
    Side::Old
}

/// Widens `hunk` on the parent-version side.
pub fn extend_context(
    hunk: &Hunk,
    policy: &ContextExtensionPolicy,
    function_span: Option<(u32, u32)>,
    file_len: u32,
) -> ExtendedHunk {
    extend_context_on(hunk, Side::Old, policy, function_span, file_len)
}

/// Widens `hunk` against the file on the given side. The widening is capped
/// by `function_span` first, then by the file bounds; the hunk's own range is
/// always kept.
pub fn extend_context_on(
    hunk: &Hunk,
    side: Side,
    policy: &ContextExtensionPolicy,
    function_span: Option<(u32, u32)>,
    file_len: u32,
) -> ExtendedHunk {
    let (start, end) = match side {
        Side::Old => hunk.old_range(),
        Side::New => hunk.new_range(),
    };
    let x = hunk.changed_line_count() as u32;
    let e = policy.extension(x);
    let mut lo = start.saturating_sub(e).max(1);
    let mut hi = end.saturating_add(e);
    let mut clamped = false;
    if let Some((fs, fe)) = function_span {
        let cap_lo = fs.min(start);
        let cap_hi = fe.max(end);
        if lo < cap_lo {
            lo = cap_lo;
            clamped = true;
        }
        if hi > cap_hi {
            hi = cap_hi;
            clamped = true;
        }
    }
    let (lo, hi) = if file_len == 0 {
        (0, 0)
    } else {
        (lo.clamp(1, file_len), hi.min(file_len).max(lo.min(file_len)))
    };
    let extend_before = start.min(file_len).saturating_sub(lo);
    let extend_after = hi.saturating_sub(end.min(file_len));
    ExtendedHunk {
        base: hunk.clone(),
        extend_before,
        extend_after,
        clamped_to_function: clamped,
        resolved_old_range: (lo, hi),
        side,
    }
}

/// Renders an extended hunk: leading file lines, the hunk body, trailing file
/// lines. `file_lines` is the file on the hunk's resolution side.
pub fn render_extended(ext: &ExtendedHunk, file_lines: &[&str]) -> String {
    let (start, end) = match ext.side {
        Side::Old => ext.base.old_range(),
        Side::New => ext.base.new_range(),
    };
    let (lo, hi) = ext.resolved_old_range;
    let mut out = String::new();
    let pick = |n: u32| file_lines.get(n as usize - 1).copied().unwrap_or("");
    if lo >= 1 {
        for n in lo..start.min(hi + 1) {
            out.push_str(&format!(" {}\n", pick(n)));
        }
    }
    out.push_str(&serialize_hunk(&ext.base));
    if hi > end {
        for n in (end + 1).max(lo)..=hi {
            out.push_str(&format!(" {}\n", pick(n)));
        }
    }
    out
}
