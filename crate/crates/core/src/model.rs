//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is an immutable value object with a canonical snake_case
//! JSON form. Top-level documents are wrapped in [`Versioned`] so readers can
//! check `schema_version` before decoding.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed sha {0:?}: expected 7 to 40 hex characters")]
    MalformedSha(String),
    #[error("malformed repository slug {0:?}: expected \"owner/name\"")]
    MalformedSlug(String),
    #[error("malformed commit url {0:?}: expected https://<forge>/<owner>/<repo>/commit/<sha> or owner/repo@sha")]
    MalformedUrl(String),
}

/// A commit in a named repository. `sha` is always lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CommitRef {
    pub repo_slug: String,
    pub sha: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub web_url: Option<String>,
}

impl CommitRef {
    /// True when both refs name the same commit. Abbreviated shas match
    /// their full form by prefix.
    pub fn same_commit(&self, other: &CommitRef) -> bool {
        self.repo_slug == other.repo_slug && sha_matches(&self.sha, &other.sha)
    }

    pub fn short_sha(&self) -> &str {
        &self.sha[..self.sha.len().min(12)]
    }
}

impl fmt::Display for CommitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.repo_slug, self.sha)
    }
}

pub fn sha_matches(a: &str, b: &str) -> bool {
    let n = a.len().min(b.len());
    n >= 7 && a[..n] == b[..n]
}

#[derive(Deserialize)]
struct RawCommitRef {
    repo_slug: String,
    sha: String,
    #[serde(default)]
    web_url: Option<String>,
}

// Deserialization goes through validation so a decoded ref always upholds
// the sha/slug invariants.
impl<'de> Deserialize<'de> for CommitRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawCommitRef::deserialize(d)?;
        let mut r = validate_commit_ref(&raw.repo_slug, &raw.sha).map_err(serde::de::Error::custom)?;
        r.web_url = raw.web_url;
        Ok(r)
    }
}

pub fn validate_commit_ref(slug: &str, sha: &str) -> Result<CommitRef, ModelError> {
    let mut halves = slug.split('/');
    let ok_slug = matches!(
        (halves.next(), halves.next(), halves.next()),
        (Some(owner), Some(name), None)
            if !owner.is_empty() && !name.is_empty() && !slug.chars().any(char::is_whitespace)
    );
    if !ok_slug {
        return Err(ModelError::MalformedSlug(slug.to_string()));
    }
    let sha_lower = sha.to_ascii_lowercase();
    if !(7..=40).contains(&sha_lower.len()) || !sha_lower.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ModelError::MalformedSha(sha.to_string()));
    }
    Ok(CommitRef { repo_slug: slug.to_string(), sha: sha_lower, web_url: None })
}

/// Parses a forge commit link or the `owner/repo@sha` shorthand.
pub fn parse_commit_url(url: &str) -> Result<CommitRef, ModelError> {
    let bad = || ModelError::MalformedUrl(url.to_string());
    let url = url.trim();
    let (slug, sha) = if let Some(rest) = url.strip_prefix("https://").or_else(|| url.strip_prefix("http://")) {
        let path = rest.split(['?', '#']).next().unwrap_or("");
        let parts: Vec<&str> = path.trim_end_matches('/').split('/').collect();
        match parts.as_slice() {
            [_host, owner, repo, "commit", sha] => (format!("{owner}/{repo}"), sha.to_string()),
            _ => return Err(bad()),
        }
    } else {
        let (slug, sha) = url.split_once('@').ok_or_else(bad)?;
        (slug.to_string(), sha.to_string())
    };
    let mut r = validate_commit_ref(&slug, &sha).map_err(|_| bad())?;
    if url.starts_with("http") {
        r.web_url = Some(url.to_string());
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    C,
    Cpp,
    Other,
}

impl Language {
    pub fn is_c_family(self) -> bool {
        matches!(self, Language::C | Language::Cpp)
    }
}

pub fn detect_language(path: &str) -> Language {
    let ext = path.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
    if path.ends_with('/') || ext.contains('/') {
        return Language::Other;
    }
    match ext {
        "c" | "h" => Language::C,
        "cc" | "cpp" | "cxx" | "hpp" | "hh" => Language::Cpp,
        _ => Language::Other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedText {
    pub number: u64,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentBundle {
    pub issues: Vec<LinkedText>,
    pub pull_requests: Vec<LinkedText>,
    pub comments: Vec<String>,
    /// Cross-repository references and URLs found in the message. Kept as
    /// text, never resolved.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_references: Vec<String>,
}

impl AttachmentBundle {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty() && self.pull_requests.is_empty() && self.comments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    #[serde(rename = "ref")]
    pub commit: CommitRef,
    pub parents: Vec<CommitRef>,
    pub message: String,
    /// UTC seconds since the epoch.
    pub author_date: i64,
    pub diffs: Vec<FileDiff>,
    pub attachments: AttachmentBundle,
}

impl CommitRecord {
    /// Merge commits are analyzed against their first parent.
    pub fn first_parent(&self) -> Option<&CommitRef> {
        self.parents.first()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileStatus {
    Added,
    Deleted,
    Modified,
    Renamed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub status: FileStatus,
    pub hunks: Vec<Hunk>,
    pub language: Language,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub binary: bool,
}

impl FileDiff {
    /// The path a reader would use to name this file: the new path unless
    /// the file was deleted.
    pub fn path(&self) -> &str {
        self.new_path.as_deref().or(self.old_path.as_deref()).unwrap_or("")
    }

    pub fn changed_line_count(&self) -> usize {
        self.hunks.iter().map(Hunk::changed_line_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    /// Text after the closing `@@` of the header, including its leading space.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub section: String,
    pub lines: Vec<LineChange>,
}

impl Hunk {
    pub fn changed_line_count(&self) -> usize {
        self.lines.iter().filter(|l| l.kind != LineKind::Context).count()
    }

    /// Inclusive old-side line range covered by the hunk. A pure insertion
    /// (old_len 0) collapses to the line it follows, or line 1 at file start.
    pub fn old_range(&self) -> (u32, u32) {
        side_range(self.old_start, self.old_len)
    }

    pub fn new_range(&self) -> (u32, u32) {
        side_range(self.new_start, self.new_len)
    }
}

fn side_range(start: u32, len: u32) -> (u32, u32) {
    if len == 0 {
        let at = start.max(1);
        (at, at)
    } else {
        (start, start + len - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Context,
    Added,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineChange {
    pub kind: LineKind,
    pub text: String,
    pub old_lineno: Option<u32>,
    pub new_lineno: Option<u32>,
    /// Followed by a `\ No newline at end of file` marker.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_newline: bool,
}

/// How far to widen a hunk before showing it to the model, as a function of
/// its changed-line count `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExtensionPolicy {
    pub small_threshold: u32,
    pub large_threshold: u32,
}

impl Default for ContextExtensionPolicy {
    fn default() -> Self {
        Self { small_threshold: 10, large_threshold: 30 }
    }
}

impl ContextExtensionPolicy {
    pub fn new(small_threshold: u32, large_threshold: u32) -> Option<Self> {
        (0 < small_threshold && small_threshold < large_threshold)
            .then_some(Self { small_threshold, large_threshold })
    }

    /// Lines to add on each side. Both thresholds belong to the middle
    /// bucket.
    pub fn extension(&self, changed_lines: u32) -> u32 {
        if changed_lines < self.small_threshold {
            changed_lines
        } else if changed_lines <= self.large_threshold {
            changed_lines / 2
        } else {
            0
        }
    }
}

/// Wraps a top-level document with `schema_version`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self { schema_version: SCHEMA_VERSION, body }
    }
}

pub fn to_versioned_json<T: Serialize>(body: &T) -> String {
    serde_json::to_string_pretty(&Versioned::new(body)).expect("domain types always serialize")
}
