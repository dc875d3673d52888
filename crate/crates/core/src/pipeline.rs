//! Pieces shared by the fix and introduction pipelines: configuration,
//! stage errors, limitation flags, the event trace, and the
//! describe-then-filter front half both pipelines start with.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{ForgeClient, ForgeError};
use crate::llm::{
    ask, ask_text, build_describe_prompt, build_relevance_prompt, enforce_budget, parse_verdict, LlmBackend, LlmError, Prompt,
    PromptLogEntry, TokenBudget,
};
use crate::model::{CommitRecord, CommitRef, ContextExtensionPolicy, FileDiff};
use crate::repo::{RepoError, RepoManager};

pub const DEFAULT_VID_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub budget: TokenBudget,
    pub policy: ContextExtensionPolicy,
    /// Commits judged after the first positive before the trace stops.
    pub vid_window: usize,
    pub max_commits: usize,
    pub follow_renames: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            budget: TokenBudget::default(),
            policy: ContextExtensionPolicy::default(),
            vid_window: DEFAULT_VID_WINDOW,
            max_commits: crate::repo::DEFAULT_MAX_COMMITS,
            follow_renames: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fetch,
    Describe,
    Relevance,
    Placement,
    Scope,
    CallSites,
    Final,
    Checkout,
    History,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("{stage:?} stage failed: {cause}")]
    StageFailed { stage: Stage, cause: String, network: bool },
}

impl PipelineError {
    pub fn is_network(&self) -> bool {
        matches!(self, PipelineError::StageFailed { network: true, .. })
    }

    pub(crate) fn forge(stage: Stage, e: ForgeError) -> Self {
        PipelineError::StageFailed { stage, network: e.is_network(), cause: e.to_string() }
    }

    pub(crate) fn llm(stage: Stage, e: LlmError) -> Self {
        PipelineError::StageFailed { stage, network: false, cause: e.to_string() }
    }

    pub(crate) fn repo(stage: Stage, e: RepoError) -> Self {
        PipelineError::StageFailed { stage, network: false, cause: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limitation {
    NewFileNoParent,
    NonFunctionChange,
    RelevanceFallback,
    ParseDegraded,
    BudgetTruncated,
    /// The parent revision could not be checked out; inter-procedural
    /// context is missing.
    ParentUnavailable,
    /// A historical candidate was skipped because its patch could not be
    /// shown within the budget.
    PatchTooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: Stage,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limitation: Option<Limitation>,
}

/// Collects the trace, limitation flags and prompt log of one run.
#[derive(Debug, Default)]
pub(crate) struct Recorder {
    pub trace: Vec<TraceEvent>,
    pub limitations: Vec<Limitation>,
    pub prompt_log: Vec<PromptLogEntry>,
}

impl Recorder {
    pub fn event(&mut self, stage: Stage, detail: impl Into<String>) {
        self.trace.push(TraceEvent { stage, detail: detail.into(), limitation: None });
    }

    pub fn flag(&mut self, stage: Stage, lim: Limitation, detail: impl Into<String>) {
        self.trace.push(TraceEvent { stage, detail: detail.into(), limitation: Some(lim) });
        if !self.limitations.contains(&lim) {
            self.limitations.push(lim);
        }
    }

    fn fit(&mut self, stage: Stage, prompt: Prompt, budget: TokenBudget) -> Result<Prompt, LlmError> {
        let p = enforce_budget(prompt, budget)?;
        if !p.truncated.is_empty() {
            self.flag(stage, Limitation::BudgetTruncated, format!("{} prompt {}: cut {}", p.kind.as_str(), p.key, p.truncated.join(", ")));
        }
        Ok(p)
    }

    /// Budgets, sends and parses one prompt, logging it.
    pub fn ask<T>(
        &mut self,
        stage: Stage,
        backend: &dyn LlmBackend,
        prompt: Prompt,
        budget: TokenBudget,
        parse: impl Fn(&str) -> Result<T, LlmError>,
    ) -> Result<T, LlmError> {
        let p = self.fit(stage, prompt, budget)?;
        let (v, entry) = ask(backend, &p, parse)?;
        self.prompt_log.push(entry);
        Ok(v)
    }

    pub fn ask_text(&mut self, stage: Stage, backend: &dyn LlmBackend, prompt: Prompt, budget: TokenBudget) -> Result<String, LlmError> {
        let p = self.fit(stage, prompt, budget)?;
        let (v, entry) = ask_text(backend, &p)?;
        self.prompt_log.push(entry);
        Ok(v)
    }
}

pub struct Pipeline<'a> {
    pub forge: &'a ForgeClient,
    pub repos: &'a RepoManager,
    pub backend: &'a dyn LlmBackend,
    pub cfg: PipelineConfig,
}

/// Output of the shared front half.
pub(crate) struct Filtered {
    pub record: CommitRecord,
    pub description: String,
    pub kept: Vec<FileDiff>,
}

impl Pipeline<'_> {
    pub fn new<'a>(forge: &'a ForgeClient, repos: &'a RepoManager, backend: &'a dyn LlmBackend, cfg: PipelineConfig) -> Pipeline<'a> {
        Pipeline { forge, repos, backend, cfg }
    }

    /// Fetch, enrich the description, and keep the patches judged relevant
    /// to it. With no relevant patch, every patch is kept and flagged.
    pub(crate) fn describe_and_filter(&self, r: &CommitRef, rec: &mut Recorder) -> Result<Filtered, PipelineError> {
        let (record, warnings) = self.forge.fetch_with_attachments(r).map_err(|e| PipelineError::forge(Stage::Fetch, e))?;
        rec.event(Stage::Fetch, format!("{} files, {} issues, {} pull requests, {} comments",
            record.diffs.len(), record.attachments.issues.len(), record.attachments.pull_requests.len(), record.attachments.comments.len()));
        for w in warnings {
            rec.event(Stage::Fetch, w);
        }
        let a = &record.attachments;
        let prompt = build_describe_prompt(&record.commit, &record.message, &a.issues, &a.pull_requests, &a.comments);
        let description = rec.ask_text(Stage::Describe, self.backend, prompt, self.cfg.budget).map_err(|e| PipelineError::llm(Stage::Describe, e))?;
        let description = if description.is_empty() { record.message.clone() } else { description };

        let mut kept = Vec::new();
        for diff in &record.diffs {
            let prompt = build_relevance_prompt(&record.commit, &description, diff);
            let v = rec.ask(Stage::Relevance, self.backend, prompt, self.cfg.budget, parse_verdict).map_err(|e| PipelineError::llm(Stage::Relevance, e))?;
            rec.event(Stage::Relevance, format!("{}: {:?}", diff.path(), v.result));
            if v.is_yes() {
                kept.push(diff.clone());
            }
        }
        if kept.is_empty() && !record.diffs.is_empty() {
            rec.flag(Stage::Relevance, Limitation::RelevanceFallback, "no patch judged relevant; analyzing all patches");
            kept = record.diffs.clone();
        }
        Ok(Filtered { record, description, kept })
    }
}
