//! Labeled datasets, scoring, and batch runs over the two pipelines.
//!
//! Metrics are kept as exact fractions and only rounded when rendered
//! (two decimals, half up), so a value like 5/6 always shows as 0.83.

use std::collections::HashSet;
use std::fmt::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::llm::VerdictResult;
use crate::model::{parse_commit_url, to_versioned_json, CommitRef, Versioned};
use crate::pipeline::{Pipeline, PipelineError};
use crate::vfd::VfdReport;
use crate::vid::VidReport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {reason}")]
    Schema { path: String, line: usize, reason: String },
    #[error("no prediction for {0}")]
    MissingPrediction(String),
    #[error("no report for {0}")]
    MissingReport(String),
    #[error("{0}")]
    Io(String),
}

/// Accepts a commit either as a `{repo_slug, sha}` object or as a string
/// in any form `parse_commit_url` understands.
fn commit_field<'de, D: Deserializer<'de>>(d: D) -> Result<CommitRef, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Text(String),
        Object(CommitRef),
    }
    match Either::deserialize(d)? {
        Either::Text(s) => parse_commit_url(&s).map_err(serde::de::Error::custom),
        Either::Object(r) => Ok(r),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VfdLabel {
    Fix,
    NonFix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VfdSample {
    #[serde(deserialize_with = "commit_field")]
    pub commit: CommitRef,
    pub label: VfdLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VidSample {
    #[serde(deserialize_with = "commit_field")]
    pub fix_commit: CommitRef,
    #[serde(deserialize_with = "commit_field")]
    pub labeled_introducer: CommitRef,
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, key: impl Fn(&T) -> &CommitRef) -> Result<Vec<T>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let p = path.display().to_string();
    let mut out: Vec<T> = Vec::new();
    let mut seen: Vec<CommitRef> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let schema = |reason: String| EvalError::Schema { path: p.clone(), line: i + 1, reason };
        if line.trim().is_empty() {
            continue;
        }
        let sample: T = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let k = key(&sample);
        if let Some(prev) = seen.iter().find(|s| s.same_commit(k)) {
            return Err(schema(format!("duplicate commit {k} (already listed as {prev})")));
        }
        seen.push(k.clone());
        out.push(sample);
    }
    Ok(out)
}

/// One sample per line; blank lines are skipped, duplicates rejected.
pub fn load_vfd_dataset(path: &Path) -> Result<Vec<VfdSample>, EvalError> {
    load_jsonl(path, |s: &VfdSample| &s.commit)
}

pub fn load_vid_dataset(path: &Path) -> Result<Vec<VidSample>, EvalError> {
    load_jsonl(path, |s: &VidSample| &s.fix_commit)
}

/// A non-negative fraction in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u128,
    den: u128,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Option<Ratio> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        Some(Ratio { num: num / g, den: den / g })
    }

    /// Exact value of a rendered two-decimal figure such as `0.81`.
    pub fn from_hundredths(h: u32) -> Ratio {
        Ratio::new(h as u128, 100).unwrap()
    }

    pub fn num(self) -> u128 {
        self.num
    }

    pub fn den(self) -> u128 {
        self.den
    }

    /// Rounded to hundredths, half up.
    pub fn hundredths(self) -> u128 {
        (200 * self.num + self.den) / (2 * self.den)
    }

    pub fn render(self) -> String {
        let h = self.hundredths();
        format!("{}.{:02}", h / 100, h % 100)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.hundredths() as f64 / 100.0)
    }
}

/// Harmonic mean 2PR/(P+R); undefined when both are zero.
pub fn f1_of(p: Ratio, r: Ratio) -> Option<Ratio> {
    let num = 2 * p.num * r.num;
    let den = p.num * r.den + r.num * p.den;
    Ratio::new(num, den)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Not defined for introduction detection.
    pub tn: Option<u64>,
    pub precision: Option<Ratio>,
    pub recall: Option<Ratio>,
    pub f1: Option<Ratio>,
    pub samples: usize,
    /// Samples whose pipeline run failed (counted as misses above).
    pub errors: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: Option<u64>) -> Self {
        let precision = Ratio::new(tp as u128, (tp + fp) as u128);
        let recall = Ratio::new(tp as u128, (tp + fn_) as u128);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) => f1_of(p, r),
            _ => None,
        };
        let samples = (tp + fp + fn_ + tn.unwrap_or(0)) as usize;
        MetricsReport { tp, fp, fn_, tn, precision, recall, f1, samples, errors: 0, partial: false }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics always serialize")
    }

    pub fn render_table(&self) -> String {
        let show = |r: Option<Ratio>| r.map_or("null".to_string(), |r| r.render());
        let count = |n: Option<u64>| n.map_or("null".to_string(), |n| n.to_string());
        let rows = [
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
            ("tn", count(self.tn)),
            ("precision", show(self.precision)),
            ("recall", show(self.recall)),
            ("f1", show(self.f1)),
            ("samples", self.samples.to_string()),
            ("errors", self.errors.to_string()),
        ];
        let w = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<9}  {v:>w$}");
        }
        if self.partial {
            out.push_str("(partial: interrupted before every sample was analyzed)\n");
        }
        out
    }
}

/// What a VFD run produced for one commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VfdOutcome {
    Verdict(VerdictResult),
    Error(String),
}

/// What a VID run produced for one fix: the predicted introducers, or the
/// failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VidOutcome {
    Predicted(Vec<CommitRef>),
    Error(String),
}

impl From<&VidReport> for VidOutcome {
    fn from(r: &VidReport) -> Self {
        VidOutcome::Predicted(r.predictions().cloned().collect())
    }
}

fn lookup<'a, T>(items: &'a [(CommitRef, T)], c: &CommitRef) -> Option<&'a T> {
    items.iter().find(|(k, _)| k.same_commit(c)).map(|(_, v)| v)
}

/// Confusion counts over every sample. A failed run counts as a "no".
pub fn score_vfd(predictions: &[(CommitRef, VfdOutcome)], samples: &[VfdSample]) -> Result<MetricsReport, EvalError> {
    let (mut tp, mut fp, mut fn_, mut tn, mut errors) = (0, 0, 0, 0, 0);
    for s in samples {
        let out = lookup(predictions, &s.commit).ok_or_else(|| EvalError::MissingPrediction(s.commit.to_string()))?;
        let yes = match out {
            VfdOutcome::Verdict(v) => *v == VerdictResult::Yes,
            VfdOutcome::Error(_) => {
                errors += 1;
                false
            }
        };
        match (yes, s.label) {
            (true, VfdLabel::Fix) => tp += 1,
            (true, VfdLabel::NonFix) => fp += 1,
            (false, VfdLabel::Fix) => fn_ += 1,
            (false, VfdLabel::NonFix) => tn += 1,
        }
    }
    let mut m = MetricsReport::from_counts(tp, fp, fn_, Some(tn));
    m.errors = errors;
    Ok(m)
}

/// Per fix: a hit if the labeled introducer is predicted, one false
/// positive for every other prediction, a miss if the label is absent.
pub fn score_vid(outcomes: &[(CommitRef, VidOutcome)], samples: &[VidSample]) -> Result<MetricsReport, EvalError> {
    let (mut tp, mut fp, mut fn_, mut errors) = (0, 0, 0, 0);
    for s in samples {
        let out = lookup(outcomes, &s.fix_commit).ok_or_else(|| EvalError::MissingReport(s.fix_commit.to_string()))?;
        match out {
            VidOutcome::Predicted(preds) => {
                let mut distinct: Vec<&CommitRef> = Vec::new();
                for p in preds {
                    if !distinct.iter().any(|d| d.same_commit(p)) {
                        distinct.push(p);
                    }
                }
                let hits = distinct.iter().filter(|p| p.same_commit(&s.labeled_introducer)).count() as u64;
                if hits > 0 {
                    tp += 1;
                } else {
                    fn_ += 1;
                }
                fp += distinct.len() as u64 - hits;
            }
            VidOutcome::Error(_) => {
                errors += 1;
                fn_ += 1;
            }
        }
    }
    let mut m = MetricsReport::from_counts(tp, fp, fn_, None);
    m.samples = samples.len();
    m.errors = errors;
    Ok(m)
}

/// File name a report for `c` is recorded under.
pub fn report_file_name(c: &CommitRef) -> String {
    format!("{}__{}.json", c.repo_slug.replace('/', "__"), c.sha)
}

fn read_reports<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Vec<T>, EvalError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for p in files {
        let text = std::fs::read_to_string(&p).map_err(|e| EvalError::Io(format!("{}: {e}", p.display())))?;
        let v: Versioned<T> = serde_json::from_str(&text)
            .map_err(|e| EvalError::Schema { path: p.display().to_string(), line: e.line(), reason: e.to_string() })?;
        out.push(v.body);
    }
    Ok(out)
}

/// Predictions from previously recorded VFD reports in `dir`.
pub fn replay_vfd(dir: &Path) -> Result<Vec<(CommitRef, VfdOutcome)>, EvalError> {
    let reports: Vec<VfdReport> = read_reports(dir)?;
    Ok(reports.into_iter().map(|r| (r.commit, VfdOutcome::Verdict(r.verdict.result))).collect())
}

pub fn replay_vid(dir: &Path) -> Result<Vec<(CommitRef, VidOutcome)>, EvalError> {
    let reports: Vec<VidReport> = read_reports(dir)?;
    Ok(reports.iter().map(|r| (r.fix_commit.clone(), VidOutcome::from(r))).collect())
}

/// Options for a live batch run.
pub struct RunOptions<'a> {
    pub concurrency: usize,
    /// Set from a signal handler; samples not yet started are skipped.
    pub cancel: &'a AtomicBool,
    /// Reports are written here for later replay.
    pub record_dir: Option<&'a Path>,
}

pub struct RunResult<T> {
    pub outcomes: Vec<(CommitRef, T)>,
    pub interrupted: bool,
}

fn run_batch<S: Sync, T: Send, R: Serialize>(
    samples: &[S],
    key: impl Fn(&S) -> &CommitRef + Sync,
    analyze: impl Fn(&CommitRef) -> Result<R, PipelineError> + Sync,
    outcome: impl Fn(Result<&R, String>) -> T + Sync,
    opts: &RunOptions<'_>,
) -> Result<RunResult<T>, EvalError> {
    if let Some(d) = opts.record_dir {
        std::fs::create_dir_all(d).map_err(|e| EvalError::Io(format!("{}: {e}", d.display())))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| EvalError::Io(e.to_string()))?;
    let io_error: Mutex<Option<EvalError>> = Mutex::new(None);
    let done: Vec<Option<(CommitRef, T)>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                if opts.cancel.load(Ordering::SeqCst) {
                    return None;
                }
                let c = key(s);
                let t = match analyze(c) {
                    Ok(rep) => {
                        if let Some(d) = opts.record_dir {
                            if let Err(e) = std::fs::write(d.join(report_file_name(c)), to_versioned_json(&rep)) {
                                *io_error.lock().unwrap() = Some(EvalError::Io(e.to_string()));
                            }
                        }
                        outcome(Ok(&rep))
                    }
                    Err(e) => {
                        log::warn!("{c}: {e}");
                        outcome(Err(e.to_string()))
                    }
                };
                Some((c.clone(), t))
            })
            .collect()
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    let interrupted = done.iter().any(Option::is_none);
    Ok(RunResult { outcomes: done.into_iter().flatten().collect(), interrupted })
}

pub fn run_vfd(p: &Pipeline<'_>, samples: &[VfdSample], opts: &RunOptions<'_>) -> Result<RunResult<VfdOutcome>, EvalError> {
    run_batch(
        samples,
        |s| &s.commit,
        |c| p.detect_fix(c),
        |r| match r {
            Ok(rep) => VfdOutcome::Verdict(rep.verdict.result),
            Err(e) => VfdOutcome::Error(e),
        },
        opts,
    )
}

pub fn run_vid(p: &Pipeline<'_>, samples: &[VidSample], opts: &RunOptions<'_>) -> Result<RunResult<VidOutcome>, EvalError> {
    run_batch(
        samples,
        |s| &s.fix_commit,
        |c| p.detect_introduction(c),
        |r| match r {
            Ok(rep) => VidOutcome::from(rep),
            Err(e) => VidOutcome::Error(e),
        },
        opts,
    )
}

/// Samples that have an outcome; used to score an interrupted run.
pub fn completed<'s, S>(samples: &'s [S], key: impl Fn(&S) -> &CommitRef, outcomes: &[(CommitRef, impl Sized)]) -> Vec<&'s S> {
    let done: HashSet<&str> = outcomes.iter().map(|(c, _)| c.sha.as_str()).collect();
    samples.iter().filter(|s| done.iter().any(|d| crate::model::sha_matches(d, &key(s).sha))).collect()
}
