//! Vulnerability-introduction detection: trace a fix back through the
//! history of the code it touches and ask the model about each candidate.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyzer::{extract_key_variables, line_count, place_lines, KeyVariable};
use crate::diff::{extend_context, extend_context_on, extract_change_lines, parse_unified_diff, render_extended, serialize_hunk, Side};
use crate::llm::{build_vid_prompt, parse_verdict, LlmError, PromptLogEntry, Verdict, VerdictResult, VidEvidence};
use crate::model::{CommitRef, FileDiff, FileStatus, Hunk, Language};
use crate::pipeline::{Limitation, Pipeline, PipelineError, Recorder, Stage, TraceEvent};
use crate::repo::{HistoryQuery, RepoHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    FileHistory,
    VariableHistory,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VidCandidate {
    pub commit: CommitRef,
    pub verdict: Verdict,
    pub source: CandidateSource,
    pub extended_patch_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PositiveWindowExhausted,
    HistoryExhausted,
    CapReached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedCommit {
    pub commit: CommitRef,
    pub source: CandidateSource,
    pub result: VerdictResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileKeyVariables {
    pub path: String,
    pub variables: Vec<KeyVariable>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VidReport {
    pub fix_commit: CommitRef,
    pub description: String,
    /// Positively judged commits, newest first, then the fallback if any.
    pub candidates: Vec<VidCandidate>,
    /// Every judged commit in judgment order.
    pub judged: Vec<JudgedCommit>,
    pub examined_count: usize,
    pub stop_reason: StopReason,
    pub key_variables: Vec<FileKeyVariables>,
    pub limitations: Vec<Limitation>,
    pub prompt_log: Vec<PromptLogEntry>,
    pub trace: Vec<TraceEvent>,
}

impl VidReport {
    /// Commits the report puts forward as introducers, fallback included.
    pub fn predictions(&self) -> impl Iterator<Item = &CommitRef> {
        self.candidates.iter().filter(|c| c.verdict.is_yes() || c.source == CandidateSource::Fallback).map(|c| &c.commit)
    }
}

/// Span of the function enclosing every line of `range`, if there is one.
fn function_span(path: &str, source: &str, language: Language, range: (u32, u32)) -> Option<(u32, u32)> {
    let len = line_count(source);
    if len == 0 {
        return None;
    }
    let a = range.0.clamp(1, len);
    let b = range.1.clamp(1, len);
    let p = place_lines(path, source, language, &[a, b]).ok()?;
    match (p.placements[0].function(), p.placements[1].function()) {
        (Some(f), Some(g)) if f == g => Some((f.start_line, f.end_line)),
        _ => None,
    }
}

fn lines_of(source: &str) -> Vec<&str> {
    let mut v: Vec<&str> = source.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    if source.ends_with('\n') {
        v.pop();
    }
    v
}

/// A hunk widened by the extension policy against `source`.
fn extended_hunk_text(policy: &crate::model::ContextExtensionPolicy, path: &str, source: &str, language: Language, hunk: &Hunk, side: Side) -> String {
    let range = match side {
        Side::Old => hunk.old_range(),
        Side::New => hunk.new_range(),
    };
    let span = if language.is_c_family() { function_span(path, source, language, range) } else { None };
    let ext = match side {
        Side::Old => extend_context(hunk, policy, span, line_count(source)),
        Side::New => extend_context_on(hunk, Side::New, policy, span, line_count(source)),
    };
    render_extended(&ext, &lines_of(source))
}

struct Candidate {
    commit: CommitRef,
    source: CandidateSource,
}

impl Pipeline<'_> {
    pub fn detect_introduction(&self, fix: &CommitRef) -> Result<VidReport, PipelineError> {
        let mut rec = Recorder::default();
        let f = self.describe_and_filter(fix, &mut rec)?;
        let fix_ref = f.record.commit.clone();
        let h = self.repos.ensure_clone(&fix_ref.repo_slug).map_err(|e| PipelineError::repo(Stage::Checkout, e))?;
        let mut report = VidReport {
            fix_commit: fix_ref.clone(),
            description: f.description.clone(),
            candidates: Vec::new(),
            judged: Vec::new(),
            examined_count: 0,
            stop_reason: StopReason::HistoryExhausted,
            key_variables: Vec::new(),
            limitations: Vec::new(),
            prompt_log: Vec::new(),
            trace: Vec::new(),
        };
        let parent = match h.first_parent(&fix_ref.sha).map_err(|e| PipelineError::repo(Stage::Checkout, e))? {
            Some(p) => p,
            None => {
                rec.flag(Stage::Checkout, Limitation::ParentUnavailable, "fix is a root commit; no history to trace");
                return Ok(finish(report, rec));
            }
        };
        let parent_ref = CommitRef { repo_slug: fix_ref.repo_slug.clone(), sha: parent.clone(), web_url: None };

        let mut evidence = VidEvidence { description: f.description.clone(), ..Default::default() };
        let mut found: Vec<Candidate> = Vec::new();
        let mut touched: Vec<String> = Vec::new();
        for diff in &f.kept {
            let path = diff.path().to_string();
            if !diff.language.is_c_family() || diff.binary || diff.hunks.is_empty() {
                rec.event(Stage::History, format!("{path}: not traced (not a C/C++ source change)"));
                continue;
            }
            if diff.status == FileStatus::Added {
                rec.flag(Stage::History, Limitation::NewFileNoParent, format!("{path}: new file, no history"));
                continue;
            }
            let old_path = diff.old_path.clone().unwrap_or_else(|| path.clone());
            touched.push(old_path.clone());
            touched.push(path.clone());
            let source = match h.file_at_revision(&parent, &old_path) {
                Ok(s) => s.text(),
                Err(e) => {
                    rec.flag(Stage::History, Limitation::NewFileNoParent, format!("{path}: {e}"));
                    continue;
                }
            };
            let changes = extract_change_lines(diff);
            let _ = writeln!(evidence.change_lines, "--- {path}");
            for d in &changes.deleted {
                let _ = writeln!(evidence.change_lines, "-{:>5}: {}", d.old_lineno, d.text);
            }
            for a in &changes.added {
                let _ = writeln!(evidence.change_lines, "+{:>5}: {}", a.new_lineno, a.text);
            }
            let _ = writeln!(evidence.extended_context, "--- {path}");
            for hunk in &diff.hunks {
                evidence.extended_context.push_str(&extended_hunk_text(&self.cfg.policy, &old_path, &source, diff.language, hunk, Side::Old));
            }

            match extract_key_variables(&changes, &source, diff.language) {
                Ok(kv) => {
                    if kv.degraded {
                        rec.flag(Stage::History, Limitation::ParseDegraded, format!("{path}: key variables found textually"));
                    }
                    for v in &kv.variables {
                        match h.line_history(&old_path, (v.source_line, v.source_line), &parent_ref) {
                            Ok(entries) => {
                                rec.event(Stage::History, format!("{path}: {} at line {}: {} commits", v.identifier, v.source_line, entries.len()));
                                found.extend(entries.into_iter().map(|e| Candidate { commit: e.commit, source: CandidateSource::VariableHistory }));
                            }
                            Err(e) => rec.event(Stage::History, format!("{path}: {}: {e}", v.identifier)),
                        }
                    }
                    report.key_variables.push(FileKeyVariables { path: path.clone(), variables: kv.variables });
                }
                Err(e) => rec.flag(Stage::History, Limitation::ParseDegraded, format!("{path}: {e}")),
            }

            let q = HistoryQuery {
                path: old_path.clone(),
                upto: fix_ref.clone(),
                follow_renames: self.cfg.follow_renames,
                max_commits: Some(self.cfg.max_commits),
            };
            match h.history_of_file(&q) {
                Ok(commits) => {
                    rec.event(Stage::History, format!("{path}: {} commits in file history", commits.len()));
                    found.extend(commits.into_iter().map(|c| Candidate { commit: c, source: CandidateSource::FileHistory }));
                }
                Err(e) => rec.event(Stage::History, format!("{path}: {e}")),
            }
        }

        let (candidates, capped) = self.merge(&h, &parent, found, &mut rec)?;
        self.judge(&h, &evidence, &touched, candidates, capped, &mut report, &mut rec)?;
        Ok(finish(report, rec))
    }

    /// Newest first along the first-parent line; commits off that line go
    /// last in discovery order. File history wins over variable history.
    fn merge(&self, h: &RepoHandle, parent: &str, found: Vec<Candidate>, rec: &mut Recorder) -> Result<(Vec<Candidate>, bool), PipelineError> {
        let order = h.first_parent_log(parent, usize::MAX >> 1).map_err(|e| PipelineError::repo(Stage::History, e))?;
        let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut merged: Vec<(usize, usize, Candidate)> = Vec::new();
        for (i, c) in found.into_iter().enumerate() {
            if let Some(existing) = merged.iter_mut().find(|(_, _, m)| m.commit.sha == c.commit.sha) {
                if c.source == CandidateSource::FileHistory {
                    existing.2.source = CandidateSource::FileHistory;
                }
                continue;
            }
            merged.push((pos.get(c.commit.sha.as_str()).copied().unwrap_or(usize::MAX), i, c));
        }
        merged.sort_by_key(|(p, i, _)| (*p, *i));
        let capped = merged.len() > self.cfg.max_commits;
        merged.truncate(self.cfg.max_commits);
        rec.event(Stage::History, format!("{} candidate commits{}", merged.len(), if capped { " (capped)" } else { "" }));
        Ok((merged.into_iter().map(|(_, _, c)| c).collect(), capped))
    }

    /// Historical patch restricted to the fix's files, each hunk widened on
    /// the candidate's side.
    fn historical_patch(&self, h: &RepoHandle, sha: &str, touched: &[String], rec: &mut Recorder) -> Option<String> {
        let text = match h.commit_patch(sha) {
            Ok(t) => t,
            Err(e) => {
                rec.event(Stage::Judge, format!("{sha}: {e}"));
                return None;
            }
        };
        let files = match parse_unified_diff(&text) {
            Ok(f) => f,
            Err(e) => {
                rec.flag(Stage::Judge, Limitation::ParseDegraded, format!("{sha}: {e}"));
                return None;
            }
        };
        let on_path = |f: &&FileDiff| [&f.old_path, &f.new_path].into_iter().flatten().any(|p| touched.contains(p));
        let mut chosen: Vec<&FileDiff> = files.iter().filter(on_path).collect();
        if chosen.is_empty() {
            chosen = files.iter().filter(|f| f.language.is_c_family()).collect();
        }
        let mut out = String::new();
        for f in chosen {
            let _ = writeln!(out, "--- {}", f.path());
            let new_source = f.new_path.as_ref().and_then(|p| h.file_at_revision(sha, p).ok()).map(|s| s.text());
            for hunk in &f.hunks {
                match &new_source {
                    Some(src) => out.push_str(&extended_hunk_text(&self.cfg.policy, f.path(), src, f.language, hunk, Side::New)),
                    None => out.push_str(&serialize_hunk(hunk)),
                }
            }
        }
        Some(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn judge(
        &self,
        h: &RepoHandle,
        evidence: &VidEvidence,
        touched: &[String],
        candidates: Vec<Candidate>,
        capped: bool,
        report: &mut VidReport,
        rec: &mut Recorder,
    ) -> Result<(), PipelineError> {
        let mut hashes: HashMap<String, String> = HashMap::new();
        let mut first_yes = false;
        let mut after_first_yes = 0;
        let mut stop = if capped { StopReason::CapReached } else { StopReason::HistoryExhausted };
        for (i, c) in candidates.iter().enumerate() {
            if first_yes && after_first_yes >= self.cfg.vid_window {
                stop = StopReason::PositiveWindowExhausted;
                rec.event(Stage::Judge, format!("stopping: {} commits judged after the first positive, {} left", after_first_yes, candidates.len() - i));
                break;
            }
            let Some(patch) = self.historical_patch(h, &c.commit.sha, touched, rec) else { continue };
            let hash = hex::encode(Sha256::digest(patch.as_bytes()));
            hashes.insert(c.commit.sha.clone(), hash.clone());
            let prompt = build_vid_prompt(&c.commit, evidence, &patch);
            let verdict = match rec.ask(Stage::Judge, self.backend, prompt, self.cfg.budget, parse_verdict) {
                Ok(v) => v,
                Err(LlmError::BudgetImpossible { required, max }) => {
                    rec.flag(Stage::Judge, Limitation::PatchTooLarge, format!("{}: needs {required} tokens of {max}", c.commit.sha));
                    continue;
                }
                Err(e) => return Err(PipelineError::llm(Stage::Judge, e)),
            };
            if first_yes {
                after_first_yes += 1;
            }
            rec.event(Stage::Judge, format!("{} ({:?}): {:?}", c.commit.sha, c.source, verdict.result));
            report.judged.push(JudgedCommit { commit: c.commit.clone(), source: c.source, result: verdict.result });
            if verdict.is_yes() {
                first_yes = true;
                report.candidates.push(VidCandidate { commit: c.commit.clone(), verdict, source: c.source, extended_patch_hash: hash });
            }
        }
        report.examined_count = report.judged.len();
        report.stop_reason = stop;
        if !first_yes {
            if let Some(newest) = candidates.first() {
                let analysis = "fallback: no historical commit was judged to introduce the vulnerability, so the most recent \
historical commit touching the fixed code is designated as the potential introducer";
                rec.event(Stage::Judge, format!("fallback to {}", newest.commit.sha));
                report.candidates.push(VidCandidate {
                    commit: newest.commit.clone(),
                    verdict: Verdict { result: VerdictResult::Yes, analysis: analysis.to_string(), raw: String::new() },
                    source: CandidateSource::Fallback,
                    extended_patch_hash: hashes.get(&newest.commit.sha).cloned().unwrap_or_default(),
                });
            }
        }
        Ok(())
    }
}

fn finish(mut report: VidReport, rec: Recorder) -> VidReport {
    report.limitations = rec.limitations;
    report.prompt_log = rec.prompt_log;
    report.trace = rec.trace;
    report
}
