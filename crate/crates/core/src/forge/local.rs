//! A [`Transport`] that answers forge requests from plain git repositories
//! on disk. Used to record fixture commits into the cache and to run demos
//! without a network.
//!
//! Layout under the root: `<owner>/<name>/` is a git repository and
//! `<owner>/<name>.forge.json` optionally holds issues and comments:
//!
//! ```json
//! {"issues": {"12": {"title": "...", "body": "...", "pull_request": false}},
//!  "comments": {"<sha>": ["first", "second"]}}
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ForgeError, HttpResponse, Transport};
use crate::diff::{parse_unified_diff, serialize_hunk};
use crate::model::FileStatus;
use crate::repo::{git, EMPTY_TREE};

#[derive(Debug, Default, Deserialize)]
struct Meta {
    #[serde(default)]
    issues: HashMap<String, Issue>,
    #[serde(default)]
    comments: HashMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct Issue {
    title: String,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    pull_request: bool,
}

pub struct LocalForge {
    root: PathBuf,
    base: String,
    /// Files whose patch exceeds this many bytes are served without one,
    /// the way the real forge does for oversized diffs.
    max_patch_bytes: usize,
}

impl LocalForge {
    pub fn new(root: impl Into<PathBuf>, api_base_url: &str) -> Self {
        LocalForge { root: root.into(), base: api_base_url.trim_end_matches('/').to_string(), max_patch_bytes: 1 << 20 }
    }

    pub fn with_max_patch_bytes(mut self, n: usize) -> Self {
        self.max_patch_bytes = n;
        self
    }

    fn meta(&self, slug: &str) -> Meta {
        std::fs::read(self.root.join(format!("{slug}.forge.json")))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    fn commit(&self, repo: &Path, sha: &str) -> Result<Option<Value>, ForgeError> {
        let spec = format!("{sha}^{{commit}}");
        let Ok(full) = git(repo, &["rev-parse", "--verify", "--quiet", &spec]) else { return Ok(None) };
        let full = String::from_utf8_lossy(&full).trim().to_string();
        let meta = git(repo, &["log", "-1", "--format=%P%n%aI%n%B", &full]).map_err(|e| ForgeError::Transport(e.to_string()))?;
        let meta = String::from_utf8_lossy(&meta).into_owned();
        let mut lines = meta.splitn(3, '\n');
        let parents: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let date = lines.next().unwrap_or("").to_string();
        let message = lines.next().unwrap_or("").trim_end_matches('\n').to_string();
        let base = parents.first().copied().unwrap_or(EMPTY_TREE);
        let diff = git(repo, &["diff", "--no-ext-diff", "--find-renames", base, &full]).map_err(|e| ForgeError::Transport(e.to_string()))?;
        let files = parse_unified_diff(&String::from_utf8_lossy(&diff)).map_err(|e| ForgeError::Transport(e.to_string()))?;
        let files: Vec<Value> = files
            .iter()
            .map(|f| {
                let status = match f.status {
                    FileStatus::Added => "added",
                    FileStatus::Deleted => "removed",
                    FileStatus::Modified => "modified",
                    FileStatus::Renamed => "renamed",
                };
                let patch: String = f.hunks.iter().map(serialize_hunk).collect();
                let mut v = json!({"filename": f.path(), "status": status, "changes": f.changed_line_count()});
                if f.status == FileStatus::Renamed {
                    v["previous_filename"] = json!(f.old_path);
                }
                if !f.binary && !patch.is_empty() && patch.len() <= self.max_patch_bytes {
                    v["patch"] = json!(patch.strip_suffix('\n').unwrap_or(&patch));
                }
                v
            })
            .collect();
        Ok(Some(json!({
            "sha": full,
            "parents": parents.iter().map(|p| json!({"sha": p})).collect::<Vec<_>>(),
            "commit": {"message": message, "author": {"date": date}},
            "files": files,
        })))
    }
}

fn query_param(query: &str, key: &str) -> Option<usize> {
    query.split('&').find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

impl Transport for LocalForge {
    fn get(&self, url: &str, _token: Option<&str>) -> Result<HttpResponse, ForgeError> {
        let not_found = || Ok(HttpResponse::json(404, &json!({"message": "Not Found"})));
        let Some(rest) = url.strip_prefix(&self.base) else { return not_found() };
        let (path, query) = rest.split_once('?').unwrap_or((rest, ""));
        let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        let ["repos", owner, name, tail @ ..] = parts.as_slice() else { return not_found() };
        let slug = format!("{owner}/{name}");
        let repo = self.root.join(&slug);
        if !repo.exists() {
            return not_found();
        }
        match tail {
            ["commits", sha] => match self.commit(&repo, sha)? {
                Some(v) => Ok(HttpResponse::json(200, &v)),
                None => not_found(),
            },
            ["commits", sha, "comments"] => {
                let per_page = query_param(query, "per_page").unwrap_or(30).max(1);
                let page = query_param(query, "page").unwrap_or(1).max(1);
                let meta = self.meta(&slug);
                let all = meta.comments.iter().find(|(k, _)| crate::model::sha_matches(k, sha)).map(|(_, v)| v.clone()).unwrap_or_default();
                let items: Vec<Value> = all.iter().skip((page - 1) * per_page).take(per_page).map(|b| json!({"body": b})).collect();
                Ok(HttpResponse::json(200, &Value::Array(items)))
            }
            ["issues", n] => match self.meta(&slug).issues.get(*n) {
                Some(i) => {
                    let mut v = json!({"number": n.parse::<u64>().unwrap_or(0), "title": i.title, "body": i.body});
                    if i.pull_request {
                        v["pull_request"] = json!({"url": format!("{}/repos/{slug}/pulls/{n}", self.base)});
                    }
                    Ok(HttpResponse::json(200, &v))
                }
                None => not_found(),
            },
            _ => not_found(),
        }
    }
}
