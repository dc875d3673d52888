#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use commitshield::forge::local::LocalForge;
use commitshield::forge::{ForgeClient, ForgeConfig, Secret};
use commitshield::model::{validate_commit_ref, CommitRef};
use commitshield::repo::RepoManager;
use tempfile::TempDir;

pub const API: &str = "http://forge.test/api";

pub fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git").current_dir(dir).args(args).env("LC_ALL", "C").output().unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A scratch area holding forge repositories, the response cache and clones.
pub struct World {
    pub tmp: TempDir,
}

impl World {
    pub fn new() -> World {
        World { tmp: tempfile::tempdir().unwrap() }
    }

    pub fn forge_root(&self) -> PathBuf {
        self.tmp.path().join("forge")
    }

    pub fn repo(&self, slug: &str) -> Repo {
        Repo::init(&self.forge_root().join(slug), slug)
    }

    pub fn meta(&self, slug: &str, v: serde_json::Value) {
        std::fs::write(self.forge_root().join(format!("{slug}.forge.json")), v.to_string()).unwrap();
    }

    pub fn forge(&self) -> ForgeClient {
        let mut cfg = ForgeConfig::new(self.tmp.path().join("cache"));
        cfg.api_base_url = API.into();
        cfg.auth_token = Some(Secret::new("fixture-token"));
        ForgeClient::with_transport(cfg, Box::new(LocalForge::new(self.forge_root(), API)))
    }

    pub fn repos(&self) -> RepoManager {
        let template = format!("{}/{{slug}}", self.forge_root().display());
        RepoManager::new(self.tmp.path().join("work")).with_clone_url_template(template)
    }
}

pub struct Repo {
    pub dir: PathBuf,
    pub slug: String,
    tick: u32,
}

impl Repo {
    pub fn init(dir: &Path, slug: &str) -> Repo {
        std::fs::create_dir_all(dir).unwrap();
        git(dir, &["init", "--quiet", "-b", "main"]);
        Repo { dir: dir.to_path_buf(), slug: slug.to_string(), tick: 0 }
    }

    pub fn write(&self, path: &str, text: &str) {
        let p = self.dir.join(path);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, text).unwrap();
        git(&self.dir, &["add", path]);
    }

    pub fn commit(&mut self, msg: &str) -> String {
        self.tick += 1;
        let date = format!("2021-01-01T{:02}:{:02}:00Z", self.tick / 60, self.tick % 60);
        let out = Command::new("git")
            .current_dir(&self.dir)
            .args(["-c", "user.name=Dev", "-c", "user.email=dev@example.org", "commit", "--quiet", "--allow-empty", "-a", "-m", msg])
            .env("GIT_AUTHOR_DATE", &date)
            .env("GIT_COMMITTER_DATE", &date)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        git(&self.dir, &["rev-parse", "HEAD"]).trim().to_string()
    }

    pub fn add_commit(&mut self, files: &[(&str, &str)], msg: &str) -> String {
        for (p, t) in files {
            self.write(p, t);
        }
        self.commit(msg)
    }

    pub fn at(&self, sha: &str) -> CommitRef {
        validate_commit_ref(&self.slug, sha).unwrap()
    }
}

pub fn yes(why: &str) -> String {
    serde_json::json!({"result": "yes", "analysis": why}).to_string()
}

pub fn no(why: &str) -> String {
    serde_json::json!({"result": "no", "analysis": why}).to_string()
}

pub const AVILIB_BEFORE: &str = r#"#include <stdlib.h>
#include <string.h>
#include "avilib.h"

#define AVI_MAX_LEN 0x7fffffff

static int avi_errno = 0;

long AVI_frame_size(avi_t *AVI, long frame)
{
    if (frame < 0 || frame >= AVI->video_frames) return 0;
    return AVI->video_index[frame].len;
}

int avi_read(avi_t *AVI, char *vidbuf, long *keyframe)
{
    long n;
    if (AVI->video_pos < 0 || AVI->video_pos >= AVI->video_frames) return -1;
    n = AVI->video_index[AVI->video_pos].len;
    *keyframe = (AVI->video_index[AVI->video_pos].key == 0x10) ? 1 : 0;
    AVI->video_pos++;
    if (gf_fseek(AVI->fdes, AVI->video_index[AVI->video_pos].pos, SEEK_SET) == -1) {
        avi_errno = 3;
        return -1;
    }
    if (avi_read_data(AVI->fdes, vidbuf, n) != n) {
        avi_errno = 3;
        return -1;
    }
    return n;
}
"#;

pub const AVILIB_AFTER: &str = r#"#include <stdlib.h>
#include <string.h>
#include "avilib.h"

#define AVI_MAX_LEN 0x7fffffff

static int avi_errno = 0;

long AVI_frame_size(avi_t *AVI, long frame)
{
    if (frame < 0 || frame >= AVI->video_frames) return 0;
    return AVI->video_index[frame].len;
}

int avi_read(avi_t *AVI, char *vidbuf, long *keyframe)
{
    long n;
    if (AVI->video_pos < 0 || AVI->video_pos >= AVI->video_frames) return -1;
    n = AVI->video_index[AVI->video_pos].len;
    *keyframe = (AVI->video_index[AVI->video_pos].key == 0x10) ? 1 : 0;
    if (gf_fseek(AVI->fdes, AVI->video_index[AVI->video_pos].pos, SEEK_SET) == -1) {
        avi_errno = 3;
        return -1;
    }
    AVI->video_pos++;
    if (avi_read_data(AVI->fdes, vidbuf, n) != n) {
        avi_errno = 3;
        return -1;
    }
    return n;
}
"#;

pub const AVI_CALLER: &str = r#"#include "avilib.h"

/* reads one frame; avi_read( in this comment is not a call */
static int import_frame(avi_t *in, char *buf)
{
    long key = 0;
    int n = avi_read(in, buf, &key);
    if (n < 0) return n;
    return key ? 1 : 0;
}

int dump_all(avi_t *in, char *buf)
{
    const char *msg = "avi_read(x) failed";
    while (import_frame(in, buf) >= 0) {}
    return avi_read(in, buf, 0) < 0 ? (int) msg[0] : 0;
}
"#;

/// A media library whose last commit moves `AVI->video_pos++` after the
/// seek, referencing an issue that explains the overflow.
pub fn avi_fixture(w: &World) -> (Repo, String) {
    let mut r = w.repo("gpac/gpac");
    r.add_commit(&[("src/avilib.c", AVILIB_BEFORE), ("src/import.c", AVI_CALLER), ("README", "media tools\n")], "import avi reader");
    let fix = r.add_commit(&[("src/avilib.c", AVILIB_AFTER)], "fixed #2574");
    w.meta(
        "gpac/gpac",
        serde_json::json!({"issues": {"2574": {"title": "heap-buffer-overflow in avi_read",
            "body": "AddressSanitizer: heap-buffer-overflow reading video_index past the last frame in avi_read"}}}),
    );
    (r, fix)
}

/// Source of a TCP input routine at revision `rev`: each revision changes
/// one tunable inside the function body.
pub fn tcp_source(rev: usize, fixed: bool) -> String {
    let fix = if fixed { "        tp->t_flags &= ~TH_FIN;\n" } else { "" };
    format!(
        "#include \"tcp.h\"\n\nstatic int tcp_window_rev = {rev};\n\nint tcp_input_fin(struct tcpcb *tp, struct sockbuf *so_rcv, int len)\n{{\n    int space = sbspace(so_rcv) - {rev};\n    if (len > space) {{\n        tp->t_flags |= TF_ACKNOW;\n{fix}        return -1;\n    }}\n    tp->rcv_nxt += len;\n    return 0;\n}}\n"
    )
}

/// `n` historical commits touching `net/tcp_input.c` (plus unrelated noise
/// commits), then a fix adding a line that clears the FIN flag. Returns the
/// historical shas oldest first and the fix sha.
pub fn tcp_history(w: &World, slug: &str, n: usize) -> (Repo, Vec<String>, String) {
    let mut r = w.repo(slug);
    let mut hist = Vec::new();
    for rev in 0..n {
        hist.push(r.add_commit(&[("net/tcp_input.c", &tcp_source(rev, false))], &format!("tcp: tune window, revision {rev}")));
        if rev % 4 == 1 {
            r.add_commit(&[("docs/NOTES", &format!("note {rev}\n"))], "docs: notes");
        }
    }
    let fix = r.add_commit(&[("net/tcp_input.c", &tcp_source(n - 1, true))], "tcp: clear FIN on dropped segment");
    (r, hist, fix)
}
