//! Acceptance criteria, one PASS/FAIL line each. Run with `--nocapture` to
//! see the lines; the test fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use commitshield::analyzer::{find_call_sites, place_lines};
use commitshield::diff::{extend_context, parse_hunks, serialize_hunk};
use commitshield::eval::{f1_of, run_vfd, score_vfd, score_vid, Ratio, RunOptions, VfdLabel, VfdSample, VidOutcome, VidSample};
use commitshield::forge::{ForgeClient, ForgeConfig};
use commitshield::llm::{enforce_budget, MockBackend, Prompt, PromptKind, Section, TokenBudget};
use commitshield::model::{detect_language, ContextExtensionPolicy, Hunk, LineChange, LineKind};
use commitshield::pipeline::{Pipeline, PipelineConfig};
use commitshield::vid::{CandidateSource, StopReason};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// 1 ------------------------------------------------------------------------

/// e(x) written straight from the rule, in floating point.
fn oracle_extension(x: u32) -> u32 {
    if x < 10 {
        x
    } else if x <= 30 {
        (x as f64 / 2.0).floor() as u32
    } else {
        0
    }
}

/// A hunk at line 500 with `x` changed lines (deletions first) and three
/// context lines on each side.
fn hunk_with_changes(x: u32) -> Hunk {
    let (del, add) = (x - x / 2, x / 2);
    let mut lines = Vec::new();
    let (mut o, mut n) = (500, 500);
    let mut push = |kind, o: &mut u32, n: &mut u32| {
        let (ol, nl) = match kind {
            LineKind::Context => (Some(*o), Some(*n)),
            LineKind::Deleted => (Some(*o), None),
            LineKind::Added => (None, Some(*n)),
        };
        if ol.is_some() {
            *o += 1;
        }
        if nl.is_some() {
            *n += 1;
        }
        lines.push(LineChange { kind, text: "x".into(), old_lineno: ol, new_lineno: nl, no_newline: false });
    };
    for _ in 0..3 {
        push(LineKind::Context, &mut o, &mut n);
    }
    for _ in 0..del {
        push(LineKind::Deleted, &mut o, &mut n);
    }
    for _ in 0..add {
        push(LineKind::Added, &mut o, &mut n);
    }
    for _ in 0..3 {
        push(LineKind::Context, &mut o, &mut n);
    }
    Hunk { old_start: 500, old_len: 6 + del, new_start: 500, new_len: 6 + add, section: String::new(), lines }
}

fn c1_context_extension() -> String {
    let t = Instant::now();
    let policy = ContextExtensionPolicy::default();
    for x in 1..=50 {
        let h = hunk_with_changes(x);
        assert_eq!(h.changed_line_count() as u32, x);
        let ext = extend_context(&h, &policy, None, 5000);
        let e = oracle_extension(x);
        assert_eq!((ext.extend_before, ext.extend_after), (e, e), "x = {x}");
        assert_eq!(ext.resolved_old_range, (500 - e, 500 + 6 + x - x / 2 - 1 + e), "x = {x}");
        assert!(!ext.clamped_to_function);
    }
    assert!(t.elapsed() < Duration::from_secs(1));
    "50/50 values of e(x) match".into()
}

// 2 ------------------------------------------------------------------------

const HAND_HUNKS: &[&str] = &[
    "@@ -1 +1 @@\n-a\n+b\n",
    "@@ -0,0 +1,3 @@\n+x\n+y\n+z\n",
    "@@ -5,3 +4,0 @@ static int f(void)\n-a\n-b\n-c\n",
    "@@ -2,2 +2,2 @@\n a\n-b\n\\ No newline at end of file\n+b\n",
    "@@ -1,2 +1,2 @@\n a\n-b\n\\ No newline at end of file\n+c\n\\ No newline at end of file\n",
    "@@ -3,3 +3,3 @@ int main(void)\n a\n-b\n+B\n c\n@@ -40,2 +40,3 @@\n d\n+e\n f\n",
    "@@ -10,4 +10,5 @@ struct \u{fc}ber\n \tif (x)  \n-\t\treturn 1;\n+\t\treturn 2; // \u{2713}\n+\n \n }\n",
    "@@ -1 +1,2 @@\n a\n+++x\n",
    "@@ -1,2 +1 @@\n---- y\n b\n",
    "@@ -7,2 +7,2 @@\n \\\\ not a marker\n-old\n+new\n",
];

/// Hunk text per file path, cut from git's own patch output.
fn git_hunks(dir: &Path, sha: &str) -> BTreeMap<String, String> {
    let out = git(dir, &["show", "--format=", "--no-ext-diff", "--find-renames", "--no-color", sha]);
    let mut map = BTreeMap::new();
    for section in out.split("\ndiff --git ").map(|s| s.trim_start_matches("diff --git ")) {
        let lines: Vec<&str> = section.split_inclusive('\n').collect();
        let path = lines
            .iter()
            .find_map(|l| l.strip_prefix("+++ b/").or_else(|| l.strip_prefix("rename to ")))
            .or_else(|| lines.iter().find_map(|l| l.strip_prefix("--- a/")))
            .map(|p| p.trim_end().to_string());
        let Some(first) = lines.iter().position(|l| l.starts_with("@@")) else { continue };
        let mut text: String = lines[first..].concat();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        map.insert(path.expect("path in section"), text);
    }
    map
}

fn c_file(rng: &mut ChaCha8Rng, name: &str, n: usize) -> Vec<String> {
    let mut v = vec![format!("int {name}(int x)"), "{".to_string()];
    for i in 0..n {
        v.push(format!("    x = x * {} + {i};", rng.gen_range(2..97)));
    }
    v.push("    return x;".into());
    v.push("}".into());
    v
}

fn join(lines: &[String], trailing_newline: bool) -> String {
    let mut s = lines.join("\n");
    if trailing_newline {
        s.push('\n');
    }
    s
}

fn mutate(rng: &mut ChaCha8Rng, lines: &mut Vec<String>) {
    for _ in 0..rng.gen_range(1..4) {
        let at = rng.gen_range(2..lines.len() - 2);
        match rng.gen_range(0..3) {
            0 => lines[at] = format!("    x ^= {};", rng.gen_range(0..1000)),
            1 => lines.insert(at, format!("    x += {};", rng.gen_range(0..1000))),
            _ => {
                lines.remove(at);
            }
        }
    }
}

fn c2_diff_round_trip() -> String {
    let mut checked = 0;
    for text in HAND_HUNKS {
        let hunks = parse_hunks(text).unwrap_or_else(|e| panic!("{text:?}: {e}"));
        let back: String = hunks.iter().map(serialize_hunk).collect();
        assert_eq!(&back, text);
        checked += 1;
    }

    let w = World::new();
    let mut r = w.repo("acme/roundtrip");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut files: Vec<(String, Vec<String>, bool)> =
        (0..8).map(|i| (format!("src/f{i}.c"), c_file(&mut rng, &format!("f{i}"), 40), i != 3)).collect();
    for (p, l, nl) in &files {
        r.write(p, &join(l, *nl));
    }
    let mut commits = vec![r.commit("import")];
    for round in 0..8 {
        for (k, (p, l, nl)) in files.iter_mut().enumerate() {
            if rng.gen_bool(0.6) {
                mutate(&mut rng, l);
                if round == 2 && k == 3 {
                    // gains its final newline
                    *nl = true;
                }
                r.write(p, &join(l, *nl));
            }
        }
        match round {
            1 => {
                // rename with a small edit
                let (p, l, nl) = &mut files[5];
                let to = "lib/f5_moved.c".to_string();
                std::fs::create_dir_all(r.dir.join("lib")).unwrap();
                git(&r.dir, &["mv", p, &to]);
                l[4] = "    x -= 1;".into();
                *p = to;
                r.write(p, &join(l, *nl));
            }
            3 => {
                let (p, l, nl) = &mut files[6];
                l.push("/* trailer */".into());
                *nl = false;
                r.write(p, &join(l, *nl));
            }
            4 => {
                git(&r.dir, &["rm", "--quiet", "-f", &files[7].0]);
                files.remove(7);
            }
            5 => {
                let l = c_file(&mut rng, "g", 12);
                r.write("src/new.c", &join(&l, true));
                files.push(("src/new.c".into(), l, true));
            }
            _ => {}
        }
        commits.push(r.commit(&format!("round {round}")));
    }

    let forge = w.forge();
    let mut offline_cfg = ForgeConfig::new(w.tmp.path().join("cache"));
    offline_cfg.api_base_url = API.into();
    offline_cfg.offline = true;
    let offline = ForgeClient::new(offline_cfg).unwrap();
    let (mut git_checked, mut saw_marker, mut saw_rename) = (0, false, false);
    for sha in &commits[1..] {
        let rec = forge.fetch_commit(&r.at(sha)).unwrap();
        assert_eq!(offline.fetch_commit(&r.at(sha)).unwrap(), rec, "cached record differs");
        let oracle = git_hunks(&r.dir, sha);
        let ours: BTreeMap<String, String> = rec
            .diffs
            .iter()
            .filter(|d| !d.hunks.is_empty())
            .map(|d| (d.path().to_string(), d.hunks.iter().map(serialize_hunk).collect()))
            .collect();
        assert_eq!(ours.keys().collect::<Vec<_>>(), oracle.keys().collect::<Vec<_>>(), "{sha}");
        for (path, text) in &ours {
            assert_eq!(text, &oracle[path], "{sha} {path}");
            saw_marker |= text.contains("\\ No newline at end of file");
            git_checked += 1;
        }
        saw_rename |= rec.diffs.iter().any(|d| d.old_path.as_deref() == Some("src/f5.c") && d.new_path.as_deref() == Some("lib/f5_moved.c"));
    }
    assert!(saw_marker && saw_rename, "marker {saw_marker}, rename {saw_rename}");
    checked += git_checked;
    assert!(checked >= 50, "only {checked} diffs");
    format!("{checked} diffs byte-identical ({} hand-built, {git_checked} from git)", HAND_HUNKS.len())
}

// 3 ------------------------------------------------------------------------

fn c3_placement() -> String {
    let line_marker = Regex::new(r"//@ (.+?)\s*$").unwrap();
    let block_marker = Regex::new(r"/\*@\s*(.+?)\s*\*/").unwrap();
    let dir = fixtures().join("placement");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(paths.len() >= 20, "{} files", paths.len());
    let (mut total, mut file_scope) = (0, 0);
    let mut wrong = Vec::new();
    for p in &paths {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let src = std::fs::read_to_string(p).unwrap();
        let labels: Vec<(u32, String)> = src
            .lines()
            .enumerate()
            .filter_map(|(i, l)| {
                let c = block_marker.captures(l).or_else(|| line_marker.captures(l))?;
                Some((i as u32 + 1, c[1].to_string()))
            })
            .collect();
        assert!(!labels.is_empty(), "{name} has no labels");
        let lines: Vec<u32> = labels.iter().map(|l| l.0).collect();
        let got = place_lines(&name, &src, detect_language(&name), &lines).unwrap();
        assert_eq!(got.warning, None, "{name}");
        for ((line, want), pl) in labels.iter().zip(&got.placements) {
            let have = pl.function().map_or("-".to_string(), |f| f.name.clone());
            total += 1;
            file_scope += usize::from(want == "-");
            if &have != want {
                wrong.push(format!("{name}:{line} want {want} got {have}"));
            }
        }
    }
    assert!(wrong.is_empty(), "{} of {total} lines misplaced:\n{}", wrong.len(), wrong.join("\n"));
    format!("{total} labeled lines in {} files ({file_scope} file scope)", paths.len())
}

// 4 ------------------------------------------------------------------------

/// Blanks comments, string and character literals, and `#if 0` blocks,
/// keeping line structure.
fn strip_noise(src: &str) -> String {
    #[derive(PartialEq)]
    enum S {
        Code,
        Line,
        Block,
        Str(char),
    }
    let mut out = String::with_capacity(src.len());
    let mut st = S::Code;
    let mut it = src.chars().peekable();
    while let Some(c) = it.next() {
        let blank = |c: char| if c == '\n' { '\n' } else { ' ' };
        match st {
            S::Code => match c {
                '/' if it.peek() == Some(&'/') => {
                    st = S::Line;
                    out.push(' ');
                }
                '/' if it.peek() == Some(&'*') => {
                    it.next();
                    st = S::Block;
                    out.push_str("  ");
                }
                '"' | '\'' => {
                    st = S::Str(c);
                    out.push(' ');
                }
                _ => out.push(c),
            },
            S::Line => {
                if c == '\n' {
                    st = S::Code;
                }
                out.push(blank(c));
            }
            S::Block => {
                if c == '*' && it.peek() == Some(&'/') {
                    it.next();
                    st = S::Code;
                    out.push_str("  ");
                } else {
                    out.push(blank(c));
                }
            }
            S::Str(q) => {
                if c == '\\' {
                    out.push(' ');
                    if let Some(n) = it.next() {
                        out.push(blank(n));
                    }
                } else {
                    if c == q {
                        st = S::Code;
                    }
                    out.push(blank(c));
                }
            }
        }
    }
    // #if 0 ... matching #endif
    let mut lines: Vec<String> = out.split('\n').map(String::from).collect();
    let mut dead: Option<usize> = None;
    let mut depth = 0;
    for l in lines.iter_mut() {
        let t = l.trim_start();
        if dead.is_none() {
            if t.starts_with("#if 0") {
                dead = Some(0);
                depth = 1;
                l.clear();
            }
            continue;
        }
        if t.starts_with("#if") {
            depth += 1;
        } else if t.starts_with("#endif") {
            depth -= 1;
        }
        if depth == 0 {
            dead = None;
        }
        l.clear();
    }
    lines.join("\n")
}

const NOT_TYPES: &[&str] = &["return", "else", "case", "do", "sizeof", "goto"];

fn oracle_sites(root: &Path, name: &str) -> BTreeSet<(String, u32)> {
    let call = Regex::new(&format!(r"\b{}\s*\(", regex::escape(name))).unwrap();
    let qualifier = Regex::new(r"(?:\w+::)+$").unwrap();
    let decl = Regex::new(r"^\s*(?:\w+\s+)*(\w+)[\s*&]+$").unwrap();
    let mut out = BTreeSet::new();
    for e in walk(root) {
        let rel = e.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
        let ext = rel.rsplit('.').next().unwrap_or("");
        if !["c", "h", "cc", "cpp", "cxx", "hpp", "hh", "hxx"].contains(&ext) {
            continue;
        }
        let text = strip_noise(&std::fs::read_to_string(&e).unwrap());
        for (i, line) in text.split('\n').enumerate() {
            for m in call.find_iter(line) {
                if m.start() == 0 {
                    continue;
                }
                let prefix = qualifier.replace(&line[..m.start()], "");
                let is_decl = decl.captures(&prefix).is_some_and(|c| !NOT_TYPES.contains(&&c[1]));
                if !is_decl {
                    out.insert((rel.clone(), i as u32 + 1));
                }
            }
        }
    }
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

fn c4_call_sites() -> String {
    let root = fixtures().join("callsites");
    let n_files = walk(&root).len();
    assert!(n_files <= 30);
    let names = ["buf_append", "buf_reset", "buf_append_str", "parse_header", "parse_body", "get", "reset", "flush", "encode", "dump_header"];
    let mut total = 0;
    for name in names {
        let want = oracle_sites(&root, name);
        let scan = find_call_sites(&root, name);
        assert!(scan.degraded_files.is_empty(), "{:?}", scan.degraded_files);
        let got: BTreeSet<(String, u32)> = scan.sites.iter().map(|s| (s.file.clone(), s.line)).collect();
        assert_eq!(got, want, "{name}");
        total += want.len();
    }
    format!("{total} call sites of {} names over {n_files} files agree", names.len())
}

// 5 ------------------------------------------------------------------------

fn junk(rng: &mut ChaCha8Rng, tokens: usize) -> String {
    const PIECES: &[&str] = &["a", "int x;", "\u{e9}", "\u{6f22}\u{5b57}", "\u{1f980}", " ", "\n", "{}", "\u{0301}"];
    let mut s = String::new();
    while s.len() < tokens * 4 {
        s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
    }
    s
}

fn adversarial(seed: u64) -> Prompt {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.gen_range(100_000..=1_000_000);
    let n = rng.gen_range(2..7);
    let head = rng.gen_range(10..2_000);
    let mut sections = vec![Section::new("instructions", 0, junk(&mut rng, head))];
    let mut left = total;
    for i in 0..n {
        let size = if i + 1 == n { left } else { rng.gen_range(0..=left) };
        left -= size;
        sections.push(Section::new(&format!("part{i}"), rng.gen_range(1..4), junk(&mut rng, size)));
    }
    let tail = rng.gen_range(10..5_000);
    sections.push(Section::new("fix", 0, junk(&mut rng, tail)));
    Prompt::new(PromptKind::VfdFinal, format!("seed{seed}"), sections)
}

fn c5_budget() -> String {
    let budget = TokenBudget::default();
    assert_eq!(budget.max_tokens, 130_000);
    let mut biggest = 0;
    for seed in 0..12 {
        let p = adversarial(seed);
        biggest = biggest.max(p.render().len().div_ceil(4));
        let fixed: Vec<Section> = p.sections.iter().filter(|s| s.priority == 0).cloned().collect();
        let a = enforce_budget(p.clone(), budget).unwrap();
        let b = enforce_budget(p, budget).unwrap();
        assert_eq!(a, b, "seed {seed}");
        let rendered = a.render();
        assert!(rendered.len().div_ceil(4) <= 130_000, "seed {seed}: {}", rendered.len().div_ceil(4));
        assert!(a.estimated_tokens <= 130_000);
        let kept: Vec<Section> = a.sections.iter().filter(|s| s.priority == 0).cloned().collect();
        assert_eq!(kept, fixed, "seed {seed}");
    }
    format!("12 prompts up to {biggest} tokens fit 130000")
}

// 6 ------------------------------------------------------------------------

fn c6_vfd_end_to_end() -> String {
    let t = Instant::now();
    let w = World::new();
    let mut r = w.repo("acme/codec");
    for i in 0..10 {
        r.write(&format!("src/m{i}.c"), &format!("int m{i}(int *a, int n, int i)\n{{\n    return a[i];\n}}\n"));
    }
    r.commit("import");
    // (labeled fix, mock says yes)
    let plan = [(true, true), (true, true), (true, true), (true, true), (true, true), (true, false), (false, true), (false, false), (false, false), (false, false)];
    let mut mock = MockBackend::default();
    let mut samples = Vec::new();
    for (i, (fix, says)) in plan.iter().enumerate() {
        let body = if *fix { "    if (i < 0 || i >= n)\n        return 0;\n    return a[i];\n" } else { "    int v = a[i];\n    return v;\n" };
        let path = format!("src/m{i}.c");
        r.write(&path, &format!("int m{i}(int *a, int n, int i)\n{{\n{body}}}\n"));
        let sha = r.commit(if *fix { "check bounds" } else { "tidy up" });
        mock = mock.with(PromptKind::Relevance, &format!("{sha}:{path}"), &yes("r"));
        if *says {
            mock = mock.with(PromptKind::VfdFinal, &sha, &yes("fix"));
        }
        samples.push(VfdSample { commit: r.at(&sha), label: if *fix { VfdLabel::Fix } else { VfdLabel::NonFix }, cve_id: None });
    }
    let (forge, repos) = (w.forge(), w.repos());
    let p = Pipeline::new(&forge, &repos, &mock, PipelineConfig::default());
    let cancel = AtomicBool::new(false);
    let run = run_vfd(&p, &samples, &RunOptions { concurrency: 4, cancel: &cancel, record_dir: None }).unwrap();
    assert!(!run.interrupted);
    let m = score_vfd(&run.outcomes, &samples).unwrap();
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (5, 1, 1, Some(3)));
    let (tp, fp, fn_) = (5.0_f64, 1.0, 1.0);
    let (op, or) = (tp / (tp + fp), tp / (tp + fn_));
    let of1 = 2.0 * op * or / (op + or);
    assert_eq!(m.precision.unwrap().render(), format!("{op:.2}"));
    assert_eq!(m.recall.unwrap().render(), format!("{or:.2}"));
    assert_eq!(m.f1.unwrap().render(), format!("{of1:.2}"));
    assert_eq!(m.f1.unwrap().render(), "0.83");
    let elapsed = t.elapsed();
    assert!(elapsed < Duration::from_secs(120));
    format!("tp5 fp1 fn1 tn3, P=R=F1=0.83 in {:.1}s", elapsed.as_secs_f64())
}

// 7 ------------------------------------------------------------------------

fn c7_vid_stopping() -> String {
    let w = World::new();
    let n = 16;
    let (r, hist, fix) = tcp_history(&w, "net/window", n);
    let newest_first: Vec<&String> = hist.iter().rev().collect();
    let (forge, repos) = (w.forge(), w.repos());
    let relevance = |m: MockBackend| m.with(PromptKind::Relevance, &format!("{fix}:net/tcp_input.c"), &yes("r"));

    // (a) random sets of positive positions
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for round in 0..10 {
        let mut yes_at: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..n)).collect();
        yes_at.sort();
        yes_at.dedup();
        let mut mock = relevance(MockBackend::default());
        for &k in &yes_at {
            mock = mock.with(PromptKind::VidJudge, newest_first[k], &yes("introduced"));
        }
        let rep = Pipeline::new(&forge, &repos, &mock, PipelineConfig::default()).detect_introduction(&r.at(&fix)).unwrap();
        let first = yes_at[0];
        let want = n.min(first + 1 + 10);
        assert_eq!(rep.examined_count, want, "round {round} {yes_at:?}");
        assert_eq!(rep.judged.len(), want);
        assert!(rep.judged.len() - (first + 1) <= 10);
        let stop = if want < n { StopReason::PositiveWindowExhausted } else { StopReason::HistoryExhausted };
        assert_eq!(rep.stop_reason, stop);
        let preds: Vec<&str> = rep.predictions().map(|c| c.sha.as_str()).collect();
        let expect: Vec<&str> = yes_at.iter().filter(|&&k| k < want).map(|&k| newest_first[k].as_str()).collect();
        assert_eq!(preds, expect);
    }

    // (b)
    let mock = relevance(MockBackend::default());
    let rep = Pipeline::new(&forge, &repos, &mock, PipelineConfig::default()).detect_introduction(&r.at(&fix)).unwrap();
    let preds: Vec<&str> = rep.predictions().map(|c| c.sha.as_str()).collect();
    assert_eq!(preds, [newest_first[0].as_str()]);
    assert_eq!(rep.candidates.len(), 1);
    assert_eq!(rep.candidates[0].source, CandidateSource::Fallback);

    // (c) nine wrong positives, then the labeled introducer
    let mut mock = relevance(MockBackend::default());
    for c in &newest_first[..10] {
        mock = mock.with(PromptKind::VidJudge, c, &yes("looks related"));
    }
    let rep = Pipeline::new(&forge, &repos, &mock, PipelineConfig::default()).detect_introduction(&r.at(&fix)).unwrap();
    let sample = VidSample { fix_commit: r.at(&fix), labeled_introducer: r.at(newest_first[9]) };
    let m = score_vid(&[(r.at(&fix), VidOutcome::from(&rep))], &[sample]).unwrap();
    assert_eq!((m.tp, m.fp, m.fn_), (1, 9, 0));
    "window bound over 10 scenarios, fallback = newest, tp=1 fp=9".into()
}

// 8 ------------------------------------------------------------------------

fn c8_metric_arithmetic() -> String {
    let mut out = Vec::new();
    for (p, r, f) in [(81, 96, "0.88"), (74, 82, "0.78")] {
        let got = f1_of(Ratio::from_hundredths(p), Ratio::from_hundredths(r)).unwrap().render();
        let (pf, rf) = (p as f64 / 100.0, r as f64 / 100.0);
        assert_eq!(format!("{:.2}", 2.0 * pf * rf / (pf + rf)), f);
        assert_eq!(got, f, "P={p} R={r}");
        out.push(format!("F1({pf:.2},{rf:.2})={got}"));
    }
    out.join(", ")
}

// --------------------------------------------------------------------------

fn message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into())
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> String);
    let criteria: [Criterion; 8] = [
        ("1 context extension", c1_context_extension),
        ("2 diff round trip", c2_diff_round_trip),
        ("3 function placement", c3_placement),
        ("4 call sites vs textual oracle", c4_call_sites),
        ("5 token budget", c5_budget),
        ("6 vfd end to end", c6_vfd_end_to_end),
        ("7 vid stopping and fallback", c7_vid_stopping),
        ("8 metric arithmetic", c8_metric_arithmetic),
    ];
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                let msg = message(e);
                println!("FAIL  {name}: {msg}");
                failed.push(name);
            }
        }
    }
    panic::set_hook(hook);
    println!("SKIP  9 live smoke: run `cargo test --test acceptance -- --ignored live_smoke`");
    assert!(failed.is_empty(), "failed: {failed:?}");
}

/// Needs network, a forge token, and an LLM endpoint. Commits come from
/// COMMITSHIELD_SMOKE_FIX and COMMITSHIELD_SMOKE_REFACTOR (commit URLs).
/// A wrong verdict is only a warning: model outputs vary by provider.
#[test]
#[ignore]
fn live_smoke() {
    use commitshield::llm::{HttpBackend, HttpBackendConfig};
    use commitshield::model::parse_commit_url;
    use commitshield::repo::RepoManager;

    let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
    let (Some(fix), Some(refactor), Some(endpoint), Some(model)) =
        (var("COMMITSHIELD_SMOKE_FIX"), var("COMMITSHIELD_SMOKE_REFACTOR"), var("COMMITSHIELD_LLM_ENDPOINT"), var("COMMITSHIELD_LLM_MODEL"))
    else {
        println!("SKIP  9 live smoke: set COMMITSHIELD_SMOKE_FIX, COMMITSHIELD_SMOKE_REFACTOR, COMMITSHIELD_LLM_ENDPOINT, COMMITSHIELD_LLM_MODEL");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ForgeConfig::new(tmp.path().join("cache"));
    cfg.auth_token = var("COMMITSHIELD_FORGE_TOKEN").map(commitshield::forge::Secret::new);
    let forge = ForgeClient::new(cfg).unwrap();
    let repos = RepoManager::new(tmp.path().join("work"));
    let backend = HttpBackend::new(HttpBackendConfig::new(&endpoint, &model), None).unwrap();
    let p = Pipeline::new(&forge, &repos, &backend, PipelineConfig::default());
    for (url, want) in [(fix, true), (refactor, false)] {
        let c = parse_commit_url(&url).unwrap();
        match p.detect_fix(&c) {
            Ok(rep) if rep.verdict.is_yes() == want => println!("PASS  9 live smoke: {url} -> {}", rep.verdict.is_yes()),
            Ok(rep) => println!("WARN  9 live smoke: {url} expected {want}, got {} ({})", rep.verdict.is_yes(), rep.verdict.analysis),
            Err(e) => println!("WARN  9 live smoke: {url}: {e}"),
        }
    }
}
