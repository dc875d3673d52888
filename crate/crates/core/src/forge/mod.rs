//! Client for the forge's REST API (GitHub v3 JSON): commits, issues and
//! pull requests referenced by number, and commit comments. Every response
//! goes through an on-disk cache; in offline mode the cache is the only
//! source.

mod cache;
pub mod local;
mod transport;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::diff::parse_hunks;
use crate::model::{
    detect_language, validate_commit_ref, AttachmentBundle, CommitRecord, CommitRef, FileDiff, FileStatus, LinkedText, ModelError,
};

pub use cache::{CacheEntry, CacheStats, DiskCache};
pub use transport::{HttpResponse, NoNetwork, ReqwestTransport, Transport};

pub const TOKEN_ENV: &str = "COMMITSHIELD_FORGE_TOKEN";
pub const DEFAULT_API_BASE: &str = "https://api.github.com";
/// Issue and PR bodies are cut to this many characters before storage.
pub const MAX_BODY_CHARS: usize = 20_000;
const COMMENTS_PER_PAGE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForgeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("rate limited by the forge{}", .retry_after.map(|s| format!(" (retry after {s}s)")).unwrap_or_default())]
    RateLimited { retry_after: Option<u64> },
    #[error("offline and not cached: {0}")]
    OfflineMiss(String),
    #[error("the forge omitted the patch for {path}")]
    PatchTooLarge { path: String },
    #[error("network access attempted: {0}")]
    NetworkAttempted(String),
    #[error("no forge token (set {TOKEN_ENV}) and {0} is not cached")]
    MissingToken(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected forge response for {what}: {reason}")]
    Decode { what: String, reason: String },
    #[error("cache i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ForgeError {
    /// Failures caused by the network or by being unable to reach it.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            ForgeError::RateLimited { .. }
                | ForgeError::OfflineMiss(_)
                | ForgeError::NetworkAttempted(_)
                | ForgeError::MissingToken(_)
                | ForgeError::Transport(_)
        )
    }
}

/// A credential that never shows up in debug output or serialized config.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Secret(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Debug for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgeConfig {
    pub api_base_url: String,
    pub auth_token: Option<Secret>,
    pub cache_dir: PathBuf,
    pub offline: bool,
    pub request_timeout: Duration,
}

impl ForgeConfig {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        ForgeConfig {
            api_base_url: DEFAULT_API_BASE.to_string(),
            auth_token: None,
            cache_dir: cache_dir.into(),
            offline: false,
            request_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceNumber(u64);

impl ReferenceNumber {
    pub fn new(value: u64) -> Option<Self> {
        (value > 0).then_some(ReferenceNumber(value))
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

static URL: Lazy<Regex> = Lazy::new(|| Regex::new(r"https?://[^\s<>()\[\]]+").unwrap());
static CROSS_REPO: Lazy<Regex> = Lazy::new(|| Regex::new(r"[A-Za-z0-9_.-]+/[A-Za-z0-9_.-]+#[0-9]+").unwrap());
static HASH_NUMBER: Lazy<Regex> = Lazy::new(|| Regex::new(r"#([0-9]+)").unwrap());

fn masked_spans(message: &str) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = URL.find_iter(message).map(|m| (m.start(), m.end())).collect();
    spans.extend(CROSS_REPO.find_iter(message).map(|m| (m.start(), m.end())));
    spans
}

/// Same-repository `#<digits>` references in order of first appearance.
pub fn extract_reference_numbers(message: &str) -> Vec<ReferenceNumber> {
    let masked = masked_spans(message);
    let bytes = message.as_bytes();
    let mut out = Vec::new();
    for cap in HASH_NUMBER.captures_iter(message) {
        let whole = cap.get(0).unwrap();
        if masked.iter().any(|&(a, b)| a <= whole.start() && whole.end() <= b) {
            continue;
        }
        // Maximal token: "#12abc" and "a#12" are not references.
        let glued_after = bytes.get(whole.end()).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_');
        let glued_before = whole.start() > 0 && (bytes[whole.start() - 1].is_ascii_alphanumeric() || bytes[whole.start() - 1] == b'&');
        if glued_after || glued_before {
            continue;
        }
        if let Some(n) = cap[1].parse().ok().and_then(ReferenceNumber::new) {
            if !out.contains(&n) {
                out.push(n);
            }
        }
    }
    out
}

/// Cross-repository references and URLs, kept verbatim.
pub fn extract_raw_references(message: &str) -> Vec<String> {
    let mut spans = masked_spans(message);
    spans.sort();
    let mut out: Vec<String> = Vec::new();
    let mut covered = 0;
    for (a, b) in spans {
        if a < covered {
            continue;
        }
        let text = message[a..b].trim_end_matches(['.', ',', ';', ':']).to_string();
        if !out.contains(&text) {
            out.push(text);
        }
        covered = b;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Issue,
    PullRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedReference {
    pub kind: ReferenceKind,
    pub number: u64,
    pub title: String,
    pub body: String,
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((at, _)) => s[..at].to_string(),
        None => s.to_string(),
    }
}

pub struct ForgeClient {
    cfg: ForgeConfig,
    cache: DiskCache,
    transport: Box<dyn Transport>,
    /// Earliest instant the next request may be admitted.
    gate: Mutex<Option<Instant>>,
    backoff_base: Duration,
    max_retries: u32,
    requests: AtomicU64,
}

impl ForgeClient {
    pub fn new(cfg: ForgeConfig) -> Result<Self, ForgeError> {
        let transport: Box<dyn Transport> =
            if cfg.offline { Box::new(NoNetwork) } else { Box::new(ReqwestTransport::new(cfg.request_timeout)?) };
        Ok(Self::with_transport(cfg, transport))
    }

    pub fn with_transport(cfg: ForgeConfig, transport: Box<dyn Transport>) -> Self {
        ForgeClient {
            cache: DiskCache::new(cfg.cache_dir.clone()),
            cfg,
            transport,
            gate: Mutex::new(None),
            backoff_base: Duration::from_secs(2),
            max_retries: 5,
            requests: AtomicU64::new(0),
        }
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn config(&self) -> &ForgeConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }

    /// Requests handed to the transport so far, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn admit(&self) {
        let wait = {
            let gate = self.gate.lock().unwrap();
            gate.map(|t| t.saturating_duration_since(Instant::now()))
        };
        if let Some(w) = wait.filter(|w| !w.is_zero()) {
            std::thread::sleep(w);
        }
    }

    fn block_for(&self, d: Duration) {
        let mut gate = self.gate.lock().unwrap();
        let until = Instant::now() + d;
        if gate.is_none_or(|t| t < until) {
            *gate = Some(until);
        }
    }

    /// GET `path` (relative to the API base), served from the cache when
    /// possible. 404 comes back as a cached entry, not an error.
    fn get(&self, endpoint: &str, path: &str) -> Result<CacheEntry, ForgeError> {
        if let Some(e) = self.cache.get(endpoint, path) {
            return Ok(e);
        }
        if self.cfg.offline {
            return Err(ForgeError::OfflineMiss(path.to_string()));
        }
        let Some(token) = self.cfg.auth_token.as_ref() else {
            return Err(ForgeError::MissingToken(path.to_string()));
        };
        let url = format!("{}{}", self.cfg.api_base_url.trim_end_matches('/'), path);
        let mut attempt = 0;
        loop {
            self.admit();
            self.requests.fetch_add(1, Ordering::SeqCst);
            let backoff = self.backoff_base * 2u32.pow(attempt);
            let resp = match self.transport.get(&url, Some(token.expose())) {
                Ok(r) => r,
                Err(ForgeError::Transport(msg)) if attempt < self.max_retries => {
                    log::warn!("{url}: {msg}; retrying in {backoff:?}");
                    self.block_for(backoff);
                    attempt += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            match resp.status {
                200 => {
                    let body: Value = serde_json::from_slice(&resp.body)
                        .map_err(|e| ForgeError::Decode { what: path.to_string(), reason: e.to_string() })?;
                    let entry = CacheEntry { status: 200, body };
                    self.cache.put(endpoint, path, &entry).map_err(|e| ForgeError::Io(e.to_string()))?;
                    return Ok(entry);
                }
                404 | 410 | 422 => {
                    let entry = CacheEntry { status: 404, body: Value::Null };
                    self.cache.put(endpoint, path, &entry).map_err(|e| ForgeError::Io(e.to_string()))?;
                    return Ok(entry);
                }
                403 | 429 => {
                    let retry_after = rate_limit_wait(&resp);
                    if resp.status == 403 && retry_after.is_none() && resp.header("x-ratelimit-remaining") != Some("0") {
                        return Err(ForgeError::Transport(format!("{url}: forbidden")));
                    }
                    if attempt >= self.max_retries {
                        return Err(ForgeError::RateLimited { retry_after });
                    }
                    let wait = backoff.max(Duration::from_secs(retry_after.unwrap_or(0)));
                    log::warn!("{url}: rate limited; waiting {wait:?}");
                    self.block_for(wait);
                    attempt += 1;
                }
                s if s >= 500 && attempt < self.max_retries => {
                    log::warn!("{url}: HTTP {s}; retrying in {backoff:?}");
                    self.block_for(backoff);
                    attempt += 1;
                }
                s => return Err(ForgeError::Transport(format!("{url}: HTTP {s}"))),
            }
        }
    }

    pub fn fetch_commit(&self, r: &CommitRef) -> Result<CommitRecord, ForgeError> {
        let path = format!("/repos/{}/commits/{}", r.repo_slug, r.sha);
        let entry = self.get("commits", &path)?;
        if entry.status == 404 {
            return Err(ForgeError::NotFound(r.to_string()));
        }
        parse_commit(&r.repo_slug, &entry.body)
    }

    pub fn resolve_reference(&self, slug: &str, n: ReferenceNumber) -> Result<ResolvedReference, ForgeError> {
        let path = format!("/repos/{slug}/issues/{}", n.value());
        let entry = self.get("issues", &path)?;
        if entry.status == 404 {
            return Err(ForgeError::NotFound(format!("{slug}#{}", n.value())));
        }
        let b = &entry.body;
        let kind = if b.get("pull_request").is_some_and(|v| !v.is_null()) { ReferenceKind::PullRequest } else { ReferenceKind::Issue };
        Ok(ResolvedReference {
            kind,
            number: n.value(),
            title: truncate_chars(b["title"].as_str().unwrap_or(""), MAX_BODY_CHARS),
            body: truncate_chars(b["body"].as_str().unwrap_or(""), MAX_BODY_CHARS),
        })
    }

    pub fn fetch_commit_comments(&self, r: &CommitRef) -> Result<Vec<String>, ForgeError> {
        let mut out = Vec::new();
        for page in 1.. {
            let path = format!("/repos/{}/commits/{}/comments?per_page={COMMENTS_PER_PAGE}&page={page}", r.repo_slug, r.sha);
            let entry = self.get("comments", &path)?;
            if entry.status == 404 {
                break;
            }
            let items = entry.body.as_array().ok_or_else(|| ForgeError::Decode { what: path.clone(), reason: "expected an array".into() })?;
            out.extend(items.iter().filter_map(|c| c["body"].as_str()).map(str::to_string));
            if items.len() < COMMENTS_PER_PAGE {
                break;
            }
        }
        Ok(out)
    }

    /// The commit plus everything its message points at. Dangling
    /// references are returned as warnings.
    pub fn fetch_with_attachments(&self, r: &CommitRef) -> Result<(CommitRecord, Vec<String>), ForgeError> {
        let mut record = self.fetch_commit(r)?;
        let mut warnings = Vec::new();
        let mut bundle = AttachmentBundle { raw_references: extract_raw_references(&record.message), ..Default::default() };
        for n in extract_reference_numbers(&record.message) {
            match self.resolve_reference(&r.repo_slug, n) {
                Ok(res) => {
                    let text = LinkedText { number: res.number, title: res.title, body: res.body };
                    match res.kind {
                        ReferenceKind::Issue => bundle.issues.push(text),
                        ReferenceKind::PullRequest => bundle.pull_requests.push(text),
                    }
                }
                Err(ForgeError::NotFound(what)) => warnings.push(format!("dangling reference {what}")),
                Err(e) => return Err(e),
            }
        }
        bundle.comments = self.fetch_commit_comments(r)?;
        record.attachments = bundle;
        Ok((record, warnings))
    }
}

fn rate_limit_wait(resp: &HttpResponse) -> Option<u64> {
    if let Some(s) = resp.header("retry-after").and_then(|v| v.trim().parse().ok()) {
        return Some(s);
    }
    let reset: u64 = resp.header("x-ratelimit-reset")?.trim().parse().ok()?;
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok()?.as_secs();
    Some(reset.saturating_sub(now))
}

fn decode_err(what: &str, reason: &str) -> ForgeError {
    ForgeError::Decode { what: what.to_string(), reason: reason.to_string() }
}

/// Builds a [`CommitRecord`] from a GitHub commit payload.
pub fn parse_commit(slug: &str, body: &Value) -> Result<CommitRecord, ForgeError> {
    let sha = body["sha"].as_str().ok_or_else(|| decode_err(slug, "missing sha"))?;
    let mut commit = validate_commit_ref(slug, sha)?;
    commit.web_url = body["html_url"].as_str().map(str::to_string);
    let parents = body["parents"]
        .as_array()
        .map(|ps| ps.iter().filter_map(|p| p["sha"].as_str()).map(|s| validate_commit_ref(slug, s)).collect::<Result<Vec<_>, _>>())
        .transpose()?
        .unwrap_or_default();
    let message = body["commit"]["message"].as_str().unwrap_or("").to_string();
    let date = body["commit"]["author"]["date"].as_str().unwrap_or("1970-01-01T00:00:00Z");
    let author_date = chrono::DateTime::parse_from_rfc3339(date).map_err(|e| decode_err(sha, &format!("author date: {e}")))?.timestamp();
    let mut diffs = Vec::new();
    for f in body["files"].as_array().map(Vec::as_slice).unwrap_or(&[]) {
        diffs.push(parse_file(f)?);
    }
    Ok(CommitRecord { commit, parents, message, author_date, diffs, attachments: AttachmentBundle::default() })
}

fn parse_file(f: &Value) -> Result<FileDiff, ForgeError> {
    let name = f["filename"].as_str().ok_or_else(|| decode_err("file", "missing filename"))?.to_string();
    let previous = f["previous_filename"].as_str().map(str::to_string);
    let (status, old_path, new_path) = match f["status"].as_str().unwrap_or("modified") {
        "added" => (FileStatus::Added, None, Some(name.clone())),
        "removed" => (FileStatus::Deleted, Some(name.clone()), None),
        "renamed" => (FileStatus::Renamed, previous.or(Some(name.clone())), Some(name.clone())),
        _ => (FileStatus::Modified, Some(name.clone()), Some(name.clone())),
    };
    let language = detect_language(&name);
    let changes = f["changes"].as_u64().unwrap_or(0);
    let (hunks, binary) = match f["patch"].as_str() {
        Some(p) => (parse_hunks(p).map_err(|e| decode_err(&name, &e.to_string()))?, false),
        None if changes == 0 => (Vec::new(), status != FileStatus::Renamed),
        None if language.is_c_family() => return Err(ForgeError::PatchTooLarge { path: name }),
        None => (Vec::new(), false),
    };
    Ok(FileDiff { old_path, new_path, status, hunks, language, binary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::collections::HashMap;
    use std::sync::Arc;

    fn refs(msg: &str) -> Vec<u64> {
        extract_reference_numbers(msg).into_iter().map(ReferenceNumber::value).collect()
    }

    #[test]
    fn reference_numbers() {
        assert_eq!(refs("fixed #2563"), vec![2563]);
        assert!(refs("refactor only").is_empty());
        assert_eq!(refs("see #12, #34 and #12"), vec![12, 34]);
        assert!(refs("#0 and #12abc and a#5 &#39;").is_empty());
        assert_eq!(refs("other/repo#7 and https://x.org/a#8 but (#9)"), vec![9]);
    }

    #[test]
    fn raw_references() {
        assert_eq!(
            extract_raw_references("see other/repo#7, https://bugs.example.org/show?id=3."),
            vec!["other/repo#7".to_string(), "https://bugs.example.org/show?id=3".to_string()]
        );
    }

    /// Serves canned responses and counts calls.
    #[derive(Clone, Default)]
    struct Canned {
        routes: Arc<Mutex<HashMap<String, Vec<HttpResponse>>>>,
        calls: Arc<AtomicU64>,
    }

    impl Canned {
        fn route(&self, path: &str, responses: Vec<HttpResponse>) {
            self.routes.lock().unwrap().insert(format!("https://forge.test{path}"), responses);
        }
    }

    impl Transport for Canned {
        fn get(&self, url: &str, _token: Option<&str>) -> Result<HttpResponse, ForgeError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut routes = self.routes.lock().unwrap();
            match routes.get_mut(url) {
                Some(rs) if rs.len() > 1 => Ok(rs.remove(0)),
                Some(rs) => Ok(rs[0].clone()),
                None => Ok(HttpResponse { status: 404, headers: vec![], body: b"{}".to_vec() }),
            }
        }
    }

    const SHA: &str = "0123456789abcdef0123456789abcdef01234567";

    fn commit_payload() -> Value {
        json!({
            "sha": SHA,
            "html_url": format!("https://github.com/a/b/commit/{SHA}"),
            "parents": [{"sha": "1111111111111111111111111111111111111111"}],
            "commit": {"message": "fixed #12", "author": {"date": "2023-08-30T10:00:00Z"}},
            "files": [
                {"filename": "src/avi.c", "status": "modified", "changes": 2,
                 "patch": "@@ -1,2 +1,2 @@\n-a\n+b\n c"},
                {"filename": "logo.png", "status": "added", "changes": 0}
            ]
        })
    }

    fn client(t: &Canned, dir: &std::path::Path) -> ForgeClient {
        let mut cfg = ForgeConfig::new(dir);
        cfg.api_base_url = "https://forge.test".into();
        cfg.auth_token = Some(Secret::new("t"));
        ForgeClient::with_transport(cfg, Box::new(t.clone())).with_backoff_base(Duration::ZERO)
    }

    #[test]
    fn commit_is_parsed_and_cached() {
        let dir = tempfile::tempdir().unwrap();
        let t = Canned::default();
        t.route(&format!("/repos/a/b/commits/{SHA}"), vec![HttpResponse::json(200, &commit_payload())]);
        let c = client(&t, dir.path());
        let r = validate_commit_ref("a/b", SHA).unwrap();
        let first = c.fetch_commit(&r).unwrap();
        assert_eq!(first.author_date, 1693389600);
        assert_eq!(first.diffs[0].hunks[0].lines.len(), 3);
        assert!(first.diffs[1].binary);
        let calls = t.calls.load(Ordering::SeqCst);
        let second = c.fetch_commit(&r).unwrap();
        assert_eq!(t.calls.load(Ordering::SeqCst), calls);
        assert_eq!(serde_json::to_string(&first).unwrap(), serde_json::to_string(&second).unwrap());

        // A fresh offline client over the same cache answers without any transport.
        let mut cfg = c.config().clone();
        cfg.offline = true;
        let offline = ForgeClient::with_transport(cfg, Box::new(NoNetwork));
        assert_eq!(offline.fetch_commit(&r).unwrap(), first);
        let other = validate_commit_ref("a/b", "2222222").unwrap();
        assert!(matches!(offline.fetch_commit(&other), Err(ForgeError::OfflineMiss(_))));
    }

    #[test]
    fn missing_patch_on_c_file() {
        let mut p = commit_payload();
        p["files"][0].as_object_mut().unwrap().remove("patch");
        assert!(matches!(parse_commit("a/b", &p), Err(ForgeError::PatchTooLarge { path }) if path == "src/avi.c"));
    }

    #[test]
    fn not_found_and_missing_token() {
        let dir = tempfile::tempdir().unwrap();
        let t = Canned::default();
        let c = client(&t, dir.path());
        let r = validate_commit_ref("a/b", SHA).unwrap();
        assert!(matches!(c.fetch_commit(&r), Err(ForgeError::NotFound(_))));
        let mut cfg = c.config().clone();
        cfg.auth_token = None;
        cfg.cache_dir = dir.path().join("other");
        let no_token = ForgeClient::with_transport(cfg, Box::new(t.clone()));
        assert!(matches!(no_token.fetch_commit(&r), Err(ForgeError::MissingToken(_))));
    }

    #[test]
    fn rate_limit_retries_then_gives_up() {
        let dir = tempfile::tempdir().unwrap();
        let t = Canned::default();
        let limited = HttpResponse { status: 429, headers: vec![("retry-after".into(), "0".into())], body: vec![] };
        let path = format!("/repos/a/b/commits/{SHA}");
        t.route(&path, vec![limited.clone(), limited.clone(), HttpResponse::json(200, &commit_payload())]);
        let c = client(&t, dir.path());
        let r = validate_commit_ref("a/b", SHA).unwrap();
        assert!(c.fetch_commit(&r).is_ok());
        assert_eq!(c.request_count(), 3);

        let dir2 = tempfile::tempdir().unwrap();
        t.route(&path, vec![limited]);
        let c = client(&t, dir2.path());
        assert_eq!(c.fetch_commit(&r), Err(ForgeError::RateLimited { retry_after: Some(0) }));
        assert_eq!(c.request_count(), 6);
    }

    #[test]
    fn references_and_paginated_comments() {
        let dir = tempfile::tempdir().unwrap();
        let t = Canned::default();
        t.route(&format!("/repos/a/b/commits/{SHA}"), vec![HttpResponse::json(200, &commit_payload())]);
        let long = "x".repeat(MAX_BODY_CHARS + 10);
        t.route("/repos/a/b/issues/12", vec![HttpResponse::json(200, &json!({"title": "overflow", "body": long, "pull_request": {"url": "u"}}))]);
        let page1: Vec<Value> = (0..100).map(|i| json!({"body": format!("c{i}")})).collect();
        let base = format!("/repos/a/b/commits/{SHA}/comments?per_page=100");
        t.route(&format!("{base}&page=1"), vec![HttpResponse::json(200, &Value::Array(page1))]);
        t.route(&format!("{base}&page=2"), vec![HttpResponse::json(200, &json!([{"body": "last"}]))]);
        let c = client(&t, dir.path());
        let r = validate_commit_ref("a/b", SHA).unwrap();
        let (rec, warnings) = c.fetch_with_attachments(&r).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(rec.attachments.pull_requests.len(), 1);
        assert_eq!(rec.attachments.pull_requests[0].body.chars().count(), MAX_BODY_CHARS);
        assert_eq!(rec.attachments.comments.len(), 101);
        assert_eq!(rec.attachments.comments.last().unwrap(), "last");
    }

    #[test]
    fn dangling_reference_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let t = Canned::default();
        t.route(&format!("/repos/a/b/commits/{SHA}"), vec![HttpResponse::json(200, &commit_payload())]);
        let c = client(&t, dir.path());
        let (rec, warnings) = c.fetch_with_attachments(&validate_commit_ref("a/b", SHA).unwrap()).unwrap();
        assert_eq!(warnings, vec!["dangling reference a/b#12".to_string()]);
        assert!(rec.attachments.is_empty());
    }

    #[test]
    fn offline_never_touches_transport() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ForgeConfig::new(dir.path());
        cfg.offline = true;
        cfg.auth_token = Some(Secret::new("t"));
        let c = ForgeClient::with_transport(cfg, Box::new(NoNetwork));
        let r = validate_commit_ref("a/b", SHA).unwrap();
        for res in [c.fetch_commit(&r).map(|_| ()), c.fetch_commit_comments(&r).map(|_| ())] {
            assert!(matches!(res, Err(ForgeError::OfflineMiss(_))));
        }
        assert_eq!(c.request_count(), 0);
    }
}
