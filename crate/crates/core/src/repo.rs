//! Local clones driven through the `git` command-line tool.
//!
//! Each repository is cloned once (bare) under the manager's root. Every
//! [`RepoHandle`] gets its own detached worktree, so concurrent analyses of
//! one repository never fight over a checkout.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_commit_ref, CommitRef};

pub const EMPTY_TREE: &str = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";
pub const DEFAULT_MAX_COMMITS: usize = 500;
const LOCK_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepoError {
    #[error("clone of {slug} failed: {reason}")]
    CloneFailed { slug: String, reason: String },
    #[error("no space left on device: {0}")]
    DiskFull(String),
    #[error("unknown commit {0}")]
    UnknownCommit(String),
    #[error("{0} is a root commit")]
    RootCommit(String),
    #[error("{path} does not exist at {rev}")]
    PathAbsentAtRevision { path: String, rev: String },
    #[error("lines {start}..={end} are outside {path} ({len} lines)")]
    RangeOutOfBounds { path: String, start: u32, end: u32, len: u32 },
    #[error("git {args}: {stderr}")]
    Git { args: String, stderr: String },
    #[error("i/o error: {0}")]
    Io(String),
}

fn io_err(e: std::io::Error) -> RepoError {
    RepoError::Io(e.to_string())
}

/// Runs git with a fixed locale and returns raw stdout.
pub(crate) fn git(dir: &Path, args: &[&str]) -> Result<Vec<u8>, RepoError> {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "core.quotepath=off", "-c", "diff.noprefix=false", "-c", "color.ui=never"])
        .args(args)
        .env("LC_ALL", "C")
        .env("GIT_TERMINAL_PROMPT", "0")
        .output()
        .map_err(io_err)?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
        if stderr.contains("No space left on device") {
            return Err(RepoError::DiskFull(stderr));
        }
        Err(RepoError::Git { args: args.join(" "), stderr })
    }
}

fn git_text(dir: &Path, args: &[&str]) -> Result<String, RepoError> {
    Ok(String::from_utf8_lossy(&git(dir, args)?).into_owned())
}

#[derive(Debug, Clone)]
pub struct RepoManager {
    root: PathBuf,
    /// `{slug}` is replaced by `owner/name`.
    clone_url_template: String,
    offline: bool,
}

static WORKTREE_SEQ: AtomicU64 = AtomicU64::new(0);

impl RepoManager {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RepoManager { root: root.into(), clone_url_template: "https://github.com/{slug}.git".into(), offline: false }
    }

    pub fn with_clone_url_template(mut self, template: impl Into<String>) -> Self {
        self.clone_url_template = template.into();
        self
    }

    /// Never fetch; only clones already on disk are usable.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn clone_dir(&self, slug: &str) -> PathBuf {
        self.root.join("clones").join(format!("{}.git", slug.replace('/', "__")))
    }

    /// Returns a handle on a fresh worktree of `slug`, cloning first if needed.
    pub fn ensure_clone(&self, slug: &str) -> Result<RepoHandle, RepoError> {
        validate_commit_ref(slug, "0000000").map_err(|e| RepoError::CloneFailed { slug: slug.into(), reason: e.to_string() })?;
        let dir = self.clone_dir(slug);
        fs::create_dir_all(dir.parent().unwrap()).map_err(io_err)?;
        if !dir.exists() {
            let _lock = LockFile::acquire(&dir.with_extension("lock"))?;
            if !dir.exists() {
                if self.offline {
                    return Err(RepoError::CloneFailed { slug: slug.into(), reason: "offline and not cloned".into() });
                }
                let url = self.clone_url_template.replace("{slug}", slug);
                let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
                let _ = fs::remove_dir_all(&tmp);
                let parent = dir.parent().unwrap();
                let tmp_s = tmp.to_string_lossy().into_owned();
                git(parent, &["clone", "--bare", "--quiet", &url, &tmp_s]).map_err(|e| match e {
                    RepoError::DiskFull(m) => RepoError::DiskFull(m),
                    other => RepoError::CloneFailed { slug: slug.into(), reason: other.to_string() },
                })?;
                fs::rename(&tmp, &dir).map_err(io_err)?;
            }
        }
        let wt_root = self.root.join("worktrees");
        fs::create_dir_all(&wt_root).map_err(io_err)?;
        let workdir = wt_root.join(format!(
            "{}-{}-{}",
            slug.replace('/', "__"),
            std::process::id(),
            WORKTREE_SEQ.fetch_add(1, Ordering::SeqCst)
        ));
        let head = git_text(&dir, &["rev-parse", "--verify", "HEAD^{commit}"])?.trim().to_string();
        let wd = workdir.to_string_lossy().into_owned();
        {
            // worktree bookkeeping lives in the shared clone
            let _lock = LockFile::acquire(&dir.with_extension("lock"))?;
            git(&dir, &["worktree", "add", "--detach", "--force", &wd, &head])?;
        }
        Ok(RepoHandle { slug: slug.to_string(), clone_dir: dir, workdir, current_revision: head, offline: self.offline })
    }
}

struct LockFile(PathBuf);

impl LockFile {
    fn acquire(path: &Path) -> Result<LockFile, RepoError> {
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(_) => return Ok(LockFile(path.to_path_buf())),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && start.elapsed() < LOCK_TIMEOUT => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(io_err(e)),
            }
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryQuery {
    pub path: String,
    pub upto: CommitRef,
    #[serde(default)]
    pub follow_renames: bool,
    #[serde(default)]
    pub max_commits: Option<usize>,
}

impl HistoryQuery {
    pub fn new(path: impl Into<String>, upto: CommitRef) -> Self {
        HistoryQuery { path: path.into(), upto, follow_renames: false, max_commits: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileAtRevision {
    pub bytes: Vec<u8>,
    pub line_count: u32,
}

impl FileAtRevision {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineHistoryEntry {
    pub commit: CommitRef,
    pub patch_text: String,
}

#[derive(Debug)]
pub struct RepoHandle {
    pub slug: String,
    clone_dir: PathBuf,
    pub workdir: PathBuf,
    pub current_revision: String,
    offline: bool,
}

impl RepoHandle {
    fn commit_ref(&self, sha: &str) -> CommitRef {
        validate_commit_ref(&self.slug, sha).expect("git prints valid shas")
    }

    /// Full sha of `rev`. An unknown commit triggers one fetch unless offline.
    pub fn resolve(&self, rev: &str) -> Result<String, RepoError> {
        let spec = format!("{rev}^{{commit}}");
        let attempt = || git_text(&self.clone_dir, &["rev-parse", "--verify", "--quiet", &spec]);
        match attempt() {
            Ok(s) => Ok(s.trim().to_string()),
            Err(_) if !self.offline => {
                let _ = git(&self.clone_dir, &["fetch", "--quiet", "origin", "+refs/heads/*:refs/heads/*", "+refs/tags/*:refs/tags/*"]);
                attempt().map(|s| s.trim().to_string()).map_err(|_| RepoError::UnknownCommit(rev.to_string()))
            }
            Err(_) => Err(RepoError::UnknownCommit(rev.to_string())),
        }
    }

    pub fn first_parent(&self, sha: &str) -> Result<Option<String>, RepoError> {
        let full = self.resolve(sha)?;
        let line = git_text(&self.clone_dir, &["rev-list", "--parents", "-n", "1", &full])?;
        Ok(line.split_whitespace().nth(1).map(str::to_string))
    }

    /// Moves this handle's worktree to the first parent of `commit`.
    pub fn checkout_parent(&mut self, commit: &CommitRef) -> Result<String, RepoError> {
        let full = self.resolve(&commit.sha)?;
        let parent = self.first_parent(&full)?.ok_or(RepoError::RootCommit(full))?;
        git(&self.workdir, &["checkout", "--quiet", "--detach", "--force", &parent])?;
        self.current_revision = parent.clone();
        Ok(parent)
    }

    pub fn file_at_revision(&self, sha: &str, path: &str) -> Result<FileAtRevision, RepoError> {
        let full = self.resolve(sha)?;
        let spec = format!("{full}:{path}");
        if git(&self.clone_dir, &["cat-file", "-e", &spec]).is_err() {
            return Err(RepoError::PathAbsentAtRevision { path: path.to_string(), rev: full });
        }
        let bytes = git(&self.clone_dir, &["cat-file", "blob", &spec])?;
        let line_count = crate::analyzer::line_count(&String::from_utf8_lossy(&bytes));
        Ok(FileAtRevision { bytes, line_count })
    }

    /// Commits on the first-parent line before `q.upto` that touched
    /// `q.path`, newest first. `q.upto` itself is not included.
    pub fn history_of_file(&self, q: &HistoryQuery) -> Result<Vec<CommitRef>, RepoError> {
        let Some(start) = self.first_parent(&q.upto.sha)? else { return Ok(Vec::new()) };
        self.file_at_revision(&start, &q.path)?;
        let max = q.max_commits.unwrap_or(DEFAULT_MAX_COMMITS).max(1).to_string();
        let mut args = vec!["log", "--first-parent", "--format=%H", "-n", &max];
        if q.follow_renames {
            args.push("--follow");
        }
        args.extend([start.as_str(), "--", q.path.as_str()]);
        let out = git_text(&self.clone_dir, &args)?;
        Ok(out.lines().filter(|l| !l.is_empty()).map(|s| self.commit_ref(s)).collect())
    }

    /// Commits whose changes touched `range` of `path` as it stands at
    /// `upto` (inclusive), newest first, with the line-limited patch.
    pub fn line_history(&self, path: &str, range: (u32, u32), upto: &CommitRef) -> Result<Vec<LineHistoryEntry>, RepoError> {
        let full = self.resolve(&upto.sha)?;
        let file = self.file_at_revision(&full, path)?;
        let (start, end) = range;
        if start == 0 || end < start || end > file.line_count {
            return Err(RepoError::RangeOutOfBounds { path: path.to_string(), start, end, len: file.line_count });
        }
        let spec = format!("{start},{end}:{path}");
        let out = git_text(&self.clone_dir, &["log", "--first-parent", "--format=%x00%H", "-L", &spec, &full])?;
        Ok(out
            .split('\0')
            .filter(|c| !c.is_empty())
            .map(|chunk| {
                let (sha, rest) = chunk.split_once('\n').unwrap_or((chunk, ""));
                LineHistoryEntry { commit: self.commit_ref(sha.trim()), patch_text: rest.trim_start_matches('\n').to_string() }
            })
            .collect())
    }

    /// Unified diff of `sha` against its first parent, or against the empty
    /// tree for a root commit.
    pub fn commit_patch(&self, sha: &str) -> Result<String, RepoError> {
        let full = self.resolve(sha)?;
        let base = self.first_parent(&full)?.unwrap_or_else(|| EMPTY_TREE.to_string());
        git_text(&self.clone_dir, &["diff", "--no-ext-diff", "--find-renames", &base, &full])
    }

    /// First-parent ancestry of `from`, newest first, `from` included.
    pub fn first_parent_log(&self, from: &str, limit: usize) -> Result<Vec<String>, RepoError> {
        let full = self.resolve(from)?;
        let n = limit.to_string();
        Ok(git_text(&self.clone_dir, &["rev-list", "--first-parent", "-n", &n, &full])?.lines().map(str::to_string).collect())
    }
}

impl Drop for RepoHandle {
    fn drop(&mut self) {
        let wd = self.workdir.to_string_lossy().into_owned();
        if git(&self.clone_dir, &["worktree", "remove", "--force", &wd]).is_err() {
            let _ = fs::remove_dir_all(&self.workdir);
            let _ = git(&self.clone_dir, &["worktree", "prune"]);
        }
    }
}
