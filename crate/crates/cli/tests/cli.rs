use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .current_dir(dir)
        .args(["-c", "user.name=Dev", "-c", "user.email=dev@example.org"])
        .args(args)
        .env("GIT_AUTHOR_DATE", "2021-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2021-01-01T00:00:00Z")
        .output()
        .unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

struct Fixture {
    tmp: tempfile::TempDir,
    fix: String,
}

impl Fixture {
    /// `acme/lib`: a bounds check added to `get`, referencing issue #7.
    fn new() -> Fixture {
        let tmp = tempfile::tempdir().unwrap();
        let repo = tmp.path().join("forge/acme/lib");
        std::fs::create_dir_all(&repo).unwrap();
        git(&repo, &["init", "--quiet", "-b", "main"]);
        let write = |text: &str| std::fs::write(repo.join("buf.c"), text).unwrap();
        write("int get(int *a, int n, int i)\n{\n    return a[i];\n}\n\nint first(int *a, int n)\n{\n    return get(a, n, 0);\n}\n");
        git(&repo, &["add", "buf.c"]);
        git(&repo, &["commit", "--quiet", "-m", "add buffer helpers"]);
        write("int get(int *a, int n, int i)\n{\n    if (i < 0 || i >= n)\n        return 0;\n    return a[i];\n}\n\nint first(int *a, int n)\n{\n    return get(a, n, 0);\n}\n");
        git(&repo, &["commit", "--quiet", "-a", "-m", "check index, fixes #7"]);
        let fix = git(&repo, &["rev-parse", "HEAD"]);
        std::fs::write(
            tmp.path().join("forge/acme/lib.forge.json"),
            r#"{"issues": {"7": {"title": "out-of-bounds read in get", "body": "negative index reads before the buffer"}}}"#,
        )
        .unwrap();
        let scenario = serde_json::json!({
            format!("relevance:{fix}:buf.c"): r#"{"result":"yes","analysis":"the check"}"#,
            format!("scope:{fix}:buf.c"): r#"{"result":"inter","analysis":"return value changes"}"#,
            format!("vfd_final:{fix}"): r#"{"result":"yes","analysis":"adds a bounds check"}"#,
        });
        std::fs::write(tmp.path().join("scenario.json"), scenario.to_string()).unwrap();
        Fixture { tmp, fix }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    fn run(&self, args: &[&str], extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_commitshield"))
            .args(args)
            .args(["--cache-dir", self.p("cache").to_str().unwrap(), "--workdir", self.p("work").to_str().unwrap()])
            .args(extra)
            .env_remove("COMMITSHIELD_FORGE_TOKEN")
            .env_remove("COMMITSHIELD_LLM_KEY")
            .output()
            .unwrap()
    }

    fn mock(&self) -> Vec<String> {
        ["--local-forge", self.p("forge").to_str().unwrap(), "--llm", "mock", "--scenario", self.p("scenario.json").to_str().unwrap()]
            .map(String::from)
            .to_vec()
    }

    fn url(&self) -> String {
        format!("https://github.com/acme/lib/commit/{}", self.fix)
    }
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn vfd_with_mock_is_deterministic() {
    let f = Fixture::new();
    let m = f.mock();
    let a = f.run(&["vfd", &f.url()], &strs(&m));
    let v = json(&a);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["verdict"]["result"], "yes");
    assert_eq!(v["call_contexts"][0]["callee"], "get");
    let b = f.run(&["vfd", &f.url()], &strs(&m));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn fetch_then_offline() {
    let f = Fixture::new();
    let m = f.mock();
    let fetched = json(&f.run(&["fetch", &format!("acme/lib@{}", f.fix)], &strs(&m)));
    assert_eq!(fetched["attachments"]["issues"][0]["number"], 7);
    // cache only: same record, no forge root needed
    let again = json(&f.run(&["fetch", &format!("acme/lib@{}", f.fix), "--offline"], &[]));
    assert_eq!(fetched, again);
    let stats = json(&f.run(&["cache", "stats"], &[]));
    assert!(stats["entries"].as_u64().unwrap() >= 2);
    json(&f.run(&["cache", "clear"], &[]));
    let miss = f.run(&["fetch", &format!("acme/lib@{}", f.fix), "--offline"], &[]);
    assert_eq!(miss.status.code(), Some(3));
    assert!(miss.stdout.is_empty());
}

#[test]
fn out_flag_keeps_stdout_empty() {
    let f = Fixture::new();
    let mut m = f.mock();
    let out = f.p("report.json");
    m.extend(["--out".to_string(), out.display().to_string()]);
    let o = f.run(&["vfd", &f.url()], &strs(&m));
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["verdict"]["result"], "yes");
}

#[test]
fn eval_records_then_replays_without_model() {
    let f = Fixture::new();
    let ds = f.p("vfd.jsonl");
    std::fs::write(&ds, format!("{{\"commit\": \"acme/lib@{}\", \"label\": \"fix\", \"cve_id\": \"CVE-0000-0001\"}}\n", f.fix)).unwrap();
    let mut m = f.mock();
    m.extend(["--record".to_string(), f.p("reports").display().to_string()]);
    let live = json(&f.run(&["eval", "vfd", "--dataset", ds.to_str().unwrap()], &strs(&m)));
    assert_eq!((live["tp"].as_u64(), live["f1"].as_f64()), (Some(1), Some(1.0)));
    // no backend configured at all: replay must not need one
    let replay = f.run(&["eval", "vfd", "--dataset", ds.to_str().unwrap(), "--replay", f.p("reports").to_str().unwrap()], &[]);
    assert_eq!(json(&replay), live);
    let table = f.run(&["eval", "vfd", "--dataset", ds.to_str().unwrap(), "--replay", f.p("reports").to_str().unwrap(), "--format", "table"], &[]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("precision") && l.ends_with("1.00")), "{text}");
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let m = f.mock();
    assert_eq!(f.run(&["vfd", "https://example.com/nope"], &strs(&m)).status.code(), Some(2));
    assert_eq!(f.run(&["vfd", &f.url(), "--llm", "mock"], &[]).status.code(), Some(2));
    // no token, nothing cached
    let o = f.run(&["vfd", &f.url(), "--llm", "mock", "--scenario", f.p("scenario.json").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    // unknown commit on a reachable forge is an analysis failure
    let o = f.run(&["vfd", "acme/lib@0123456789abcdef"], &strs(&m));
    assert_eq!(o.status.code(), Some(1));
    let ds = f.p("dup.jsonl");
    let line = format!("{{\"commit\": \"acme/lib@{}\", \"label\": \"fix\"}}\n", f.fix);
    std::fs::write(&ds, format!("{line}{line}")).unwrap();
    let o = f.run(&["eval", "vfd", "--dataset", ds.to_str().unwrap(), "--replay", "."], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn config_file_is_layered_under_flags() {
    let f = Fixture::new();
    let cfg = f.p("cs.toml");
    std::fs::write(&cfg, "[forge]\nlocal_root = \"forge\"\n[llm]\nbackend = \"mock\"\nscenario_file = \"scenario.json\"\n").unwrap();
    let v = json(&f.run(&["vfd", &f.url(), "--config", cfg.to_str().unwrap()], &[]));
    assert_eq!(v["verdict"]["result"], "yes");
    // a flag overrides the file: an empty scenario answers "no"
    std::fs::write(f.p("empty.json"), "{}").unwrap();
    let v = json(&f.run(&["vfd", &f.url(), "--config", cfg.to_str().unwrap(), "--scenario", f.p("empty.json").to_str().unwrap()], &[]));
    assert_eq!(v["verdict"]["result"], "no");
}
