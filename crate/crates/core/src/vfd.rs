//! Vulnerability-fix detection for a single commit.

use serde::{Deserialize, Serialize};

use crate::analyzer::{find_call_sites, line_count, place_lines, CallSiteContext, FunctionSpan};
use crate::diff::insertion_anchor;
use crate::llm::{build_scope_prompt, build_vfd_prompt, parse_scope_verdict, parse_verdict, PromptLogEntry, ScopeResult, Verdict};
use crate::model::{CommitRef, FileDiff, FileStatus, LineKind};
use crate::pipeline::{Limitation, Pipeline, PipelineError, Recorder, Stage, TraceEvent};
use crate::repo::{RepoError, RepoHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeClass {
    Intra,
    Inter,
    FileScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeAnalysis {
    pub path: String,
    /// Hunks of the patch covered by this analysis (one prompt per patch).
    pub hunks: Vec<usize>,
    pub classification: ScopeClass,
    pub functions: Vec<FunctionSpan>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfdReport {
    pub commit: CommitRef,
    pub verdict: Verdict,
    pub description: String,
    pub relevant_patches: Vec<String>,
    pub scope_results: Vec<ScopeAnalysis>,
    pub call_contexts: Vec<CallSiteContext>,
    pub limitations: Vec<Limitation>,
    pub prompt_log: Vec<PromptLogEntry>,
    pub trace: Vec<TraceEvent>,
}

/// Parent-side lines a patch touches: deleted lines, and for insertions the
/// line they follow.
pub fn parent_lines_of(diff: &FileDiff, parent_len: u32) -> Vec<u32> {
    let mut lines = Vec::new();
    for h in &diff.hunks {
        for (i, l) in h.lines.iter().enumerate() {
            let n = match l.kind {
                LineKind::Deleted => l.old_lineno.unwrap_or(1),
                LineKind::Added => insertion_anchor(h, i),
                LineKind::Context => continue,
            };
            lines.push(n.clamp(1, parent_len.max(1)));
        }
    }
    lines.sort_unstable();
    lines.dedup();
    lines
}

/// The parent revision, checked out lazily on first use.
struct ParentTree<'p> {
    pipeline: &'p Pipeline<'p>,
    commit: CommitRef,
    state: Option<Result<(RepoHandle, String), String>>,
}

impl ParentTree<'_> {
    fn get(&mut self) -> Result<&(RepoHandle, String), &String> {
        if self.state.is_none() {
            let r = self.pipeline.repos.ensure_clone(&self.commit.repo_slug).and_then(|mut h| {
                let parent = h.checkout_parent(&self.commit)?;
                Ok((h, parent))
            });
            self.state = Some(r.map_err(|e: RepoError| e.to_string()));
        }
        self.state.as_ref().unwrap().as_ref()
    }
}

impl Pipeline<'_> {
    pub fn detect_fix(&self, r: &CommitRef) -> Result<VfdReport, PipelineError> {
        let mut rec = Recorder::default();
        let f = self.describe_and_filter(r, &mut rec)?;
        let commit = f.record.commit.clone();
        let mut parent = ParentTree { pipeline: self, commit: commit.clone(), state: None };
        let mut scope_results = Vec::new();
        let mut intra_functions: Vec<FunctionSpan> = Vec::new();
        let mut call_contexts: Vec<CallSiteContext> = Vec::new();

        for diff in &f.kept {
            let path = diff.path().to_string();
            let hunks: Vec<usize> = (0..diff.hunks.len()).collect();
            let raw = |rationale: &str| ScopeAnalysis {
                path: path.clone(),
                hunks: hunks.clone(),
                classification: ScopeClass::FileScope,
                functions: Vec::new(),
                rationale: rationale.to_string(),
            };
            if !diff.language.is_c_family() || diff.binary || diff.hunks.is_empty() {
                rec.event(Stage::Placement, format!("{path}: not analyzed as C/C++ source; kept as raw patch"));
                scope_results.push(raw("not a C/C++ source change"));
                continue;
            }
            if diff.status == FileStatus::Added {
                rec.flag(Stage::Placement, Limitation::NewFileNoParent, format!("{path}: new file, no parent version"));
                scope_results.push(raw("new file; no parent version to analyze"));
                continue;
            }
            let old_path = diff.old_path.clone().unwrap_or_else(|| path.clone());
            let source = match parent.get() {
                Ok((h, sha)) => h.file_at_revision(sha, &old_path).map(|f| f.text()),
                Err(e) => {
                    let e = e.clone();
                    rec.flag(Stage::Checkout, Limitation::ParentUnavailable, format!("{path}: {e}"));
                    scope_results.push(raw("parent revision unavailable"));
                    continue;
                }
            };
            let source = match source {
                Ok(s) => s,
                Err(e) => {
                    rec.flag(Stage::Placement, Limitation::NewFileNoParent, format!("{path}: {e}"));
                    scope_results.push(raw("file absent at parent revision"));
                    continue;
                }
            };
            let len = line_count(&source);
            let lines = parent_lines_of(diff, len);
            let placements = if len == 0 {
                None
            } else {
                match place_lines(&old_path, &source, diff.language, &lines) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        rec.flag(Stage::Placement, Limitation::ParseDegraded, format!("{path}: {e}"));
                        None
                    }
                }
            };
            let mut functions: Vec<FunctionSpan> = Vec::new();
            if let Some(p) = &placements {
                if let Some(w) = &p.warning {
                    rec.flag(Stage::Placement, Limitation::ParseDegraded, w.clone());
                }
                for f in p.placements.iter().filter_map(|l| l.function()) {
                    if !functions.iter().any(|g| g.name == f.name && g.start_line == f.start_line) {
                        functions.push(f.clone());
                    }
                }
            }
            if functions.is_empty() {
                rec.flag(Stage::Placement, Limitation::NonFunctionChange, format!("{path}: change lies outside any function"));
                scope_results.push(raw("change at file scope (declarations, macros or includes)"));
                continue;
            }
            let prompt = build_scope_prompt(&commit, diff, &functions);
            let v = rec
                .ask(Stage::Scope, self.backend, prompt, self.cfg.budget, parse_scope_verdict)
                .map_err(|e| PipelineError::llm(Stage::Scope, e))?;
            rec.event(Stage::Scope, format!("{path}: {:?}", v.result));
            let classification = match v.result {
                ScopeResult::Intra => {
                    for f in &functions {
                        if !intra_functions.contains(f) {
                            intra_functions.push(f.clone());
                        }
                    }
                    ScopeClass::Intra
                }
                ScopeResult::Inter => {
                    match parent.get() {
                        Ok((h, _)) => {
                            for func in &functions {
                                let name = func.short_name();
                                if name.starts_with('<') {
                                    continue;
                                }
                                let scan = find_call_sites(&h.workdir, name);
                                for d in &scan.degraded_files {
                                    rec.flag(Stage::CallSites, Limitation::ParseDegraded, format!("{d}: call sites found textually"));
                                }
                                rec.event(Stage::CallSites, format!("{name}: {} call sites", scan.sites.len()));
                                for s in scan.sites {
                                    if !call_contexts.iter().any(|c| c.file == s.file && c.line == s.line && c.callee == s.callee) {
                                        call_contexts.push(s);
                                    }
                                }
                            }
                        }
                        Err(e) => {
                            let e = e.clone();
                            rec.flag(Stage::CallSites, Limitation::ParentUnavailable, format!("{path}: {e}"));
                        }
                    }
                    ScopeClass::Inter
                }
            };
            scope_results.push(ScopeAnalysis { path, hunks, classification, functions, rationale: v.analysis });
        }

        let prompt = build_vfd_prompt(&commit, &f.description, &f.kept, &intra_functions, &call_contexts);
        let verdict = rec.ask(Stage::Final, self.backend, prompt, self.cfg.budget, parse_verdict).map_err(|e| PipelineError::llm(Stage::Final, e))?;
        rec.event(Stage::Final, format!("verdict {:?}", verdict.result));
        Ok(VfdReport {
            commit,
            verdict,
            description: f.description,
            relevant_patches: f.kept.iter().map(|d| d.path().to_string()).collect(),
            scope_results,
            call_contexts,
            limitations: rec.limitations,
            prompt_log: rec.prompt_log,
            trace: rec.trace,
        })
    }
}
