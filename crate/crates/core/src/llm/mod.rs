//! Prompt assembly, token budgeting, verdict parsing and model backends.

mod backend;
mod templates;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backend::{HttpBackend, HttpBackendConfig, LlmBackend, MockBackend, LLM_KEY_ENV};
pub use templates::{
    build_describe_prompt, build_relevance_prompt, build_scope_prompt, build_vfd_prompt, build_vid_prompt, VidEvidence,
    TEMPLATE_VERSION,
};

pub const DEFAULT_MAX_TOKENS: usize = 130_000;
/// Truncation step, in estimated tokens.
pub const TRUNCATION_STEP: usize = 1_000;
/// Extra attempts after an unparseable answer.
pub const VERDICT_RETRIES: usize = 3;
pub const JSON_REMINDER: &str = "\n\nRespond with JSON only, exactly one object with the keys \"result\" and \"analysis\".";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("priority-0 sections need {required} tokens, budget is {max}")]
    BudgetImpossible { required: usize, max: usize },
    #[error("unparseable model response: {0}")]
    Unparseable(String),
    #[error("no usable answer after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("model endpoint error: {0}")]
    Backend(String),
    #[error("missing API key (set {LLM_KEY_ENV})")]
    MissingKey,
    #[error("scenario file error: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Describe,
    Relevance,
    Scope,
    VfdFinal,
    VidJudge,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] =
        [PromptKind::Describe, PromptKind::Relevance, PromptKind::Scope, PromptKind::VfdFinal, PromptKind::VidJudge];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Describe => "describe",
            PromptKind::Relevance => "relevance",
            PromptKind::Scope => "scope",
            PromptKind::VfdFinal => "vfd_final",
            PromptKind::VidJudge => "vid_judge",
        }
    }

    pub fn parse(s: &str) -> Option<PromptKind> {
        PromptKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    /// 0 is never truncated; larger numbers are cut first.
    pub priority: u8,
    pub text: String,
}

impl Section {
    pub fn new(label: &str, priority: u8, text: impl Into<String>) -> Self {
        Section { label: label.to_string(), priority, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    /// Identifies the subject (commit, commit:path, candidate) so scripted
    /// backends can answer per subject.
    pub key: String,
    /// Template order, not priority order.
    pub sections: Vec<Section>,
    pub estimated_tokens: usize,
    /// Labels of sections shortened by budget enforcement.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated: Vec<String>,
}

pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;

    /// Estimate of one rendered section.
    fn estimate_section(&self, s: &Section) -> usize {
        self.estimate(&render_section(s))
    }
}

/// One token per four bytes, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimator;

impl TokenEstimator for ByteEstimator {
    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }

    fn estimate_section(&self, s: &Section) -> usize {
        // "## " + label + "\n" + text + "\n\n"
        (s.label.len() + s.text.len() + 6).div_ceil(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_tokens: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget { max_tokens: DEFAULT_MAX_TOKENS }
    }
}

impl TokenBudget {
    pub fn new(max_tokens: usize) -> Option<Self> {
        (max_tokens > 0).then_some(TokenBudget { max_tokens })
    }
}

fn header(kind: PromptKind, key: &str) -> String {
    format!("[{} {} template {}]\n\n", kind.as_str(), key, TEMPLATE_VERSION)
}

fn render_section(s: &Section) -> String {
    format!("## {}\n{}\n\n", s.label, s.text)
}

impl Prompt {
    pub fn new(kind: PromptKind, key: impl Into<String>, sections: Vec<Section>) -> Self {
        let mut p = Prompt { kind, key: key.into(), sections, estimated_tokens: 0, truncated: Vec::new() };
        p.estimated_tokens = p.estimate_with(&ByteEstimator);
        p
    }

    /// Sum of the per-part estimates (header plus each rendered section),
    /// never less than the estimate of the whole text.
    pub fn estimate_with(&self, est: &dyn TokenEstimator) -> usize {
        est.estimate(&header(self.kind, &self.key)) + self.sections.iter().map(|s| est.estimate_section(s)).sum::<usize>()
    }

    pub fn render(&self) -> String {
        let mut out = header(self.kind, &self.key);
        for s in &self.sections {
            out.push_str(&render_section(s));
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    pub fn section(&self, label: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.label == label)
    }
}

/// Reads the kind and key back out of rendered prompt text.
pub fn prompt_identity(text: &str) -> Option<(PromptKind, &str)> {
    let line = text.lines().next()?.strip_prefix('[')?.strip_suffix(']')?;
    let (kind, rest) = line.split_once(' ')?;
    let (key, _) = rest.rsplit_once(" template ")?;
    Some((PromptKind::parse(kind)?, key))
}

/// Shrinks the prompt until it fits: repeatedly takes the section with the
/// highest priority number (ties: the longest, then the later one) and cuts
/// one step off its tail. Priority-0 sections are never touched.
pub fn enforce_budget(prompt: Prompt, budget: TokenBudget) -> Result<Prompt, LlmError> {
    enforce_budget_with(prompt, budget, &ByteEstimator)
}

pub fn enforce_budget_with(mut prompt: Prompt, budget: TokenBudget, est: &dyn TokenEstimator) -> Result<Prompt, LlmError> {
    let mut parts: Vec<usize> = prompt.sections.iter().map(|s| est.estimate_section(s)).collect();
    let head = est.estimate(&header(prompt.kind, &prompt.key));
    let fixed: usize = head
        + prompt
            .sections
            .iter()
            .zip(&parts)
            .map(|(s, &n)| if s.priority == 0 { n } else { est.estimate_section(&Section::new(&s.label, 0, "")) })
            .sum::<usize>();
    if fixed > budget.max_tokens {
        return Err(LlmError::BudgetImpossible { required: fixed, max: budget.max_tokens });
    }
    let step_bytes = TRUNCATION_STEP * 4;
    let mut total = head + parts.iter().sum::<usize>();
    while total > budget.max_tokens {
        let victim = prompt
            .sections
            .iter()
            .enumerate()
            .filter(|(_, s)| s.priority > 0 && !s.text.is_empty())
            .max_by_key(|(i, s)| (s.priority, s.text.len(), *i))
            .map(|(i, _)| i);
        let Some(i) = victim else {
            return Err(LlmError::BudgetImpossible { required: total, max: budget.max_tokens });
        };
        let s = &mut prompt.sections[i];
        let mut cut = s.text.len().saturating_sub(step_bytes);
        while !s.text.is_char_boundary(cut) {
            cut -= 1;
        }
        s.text.truncate(cut);
        if !prompt.truncated.contains(&s.label) {
            prompt.truncated.push(s.label.clone());
        }
        let n = est.estimate_section(s);
        total = total - parts[i] + n;
        parts[i] = n;
    }
    prompt.estimated_tokens = total;
    Ok(prompt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictResult {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub result: VerdictResult,
    pub analysis: String,
    pub raw: String,
}

impl Verdict {
    pub fn is_yes(&self) -> bool {
        self.result == VerdictResult::Yes
    }

    /// The canonical JSON answer this verdict was (or could have been) parsed from.
    pub fn to_json(&self) -> String {
        serde_json::json!({"result": self.result, "analysis": self.analysis}).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeResult {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeVerdict {
    pub result: ScopeResult,
    pub analysis: String,
}

/// First JSON object in `text`, looking past prose and code fences.
fn first_json_object(text: &str) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(m))) = stream.next() {
            return Some(m);
        }
    }
    None
}

fn result_and_analysis(text: &str) -> Result<(String, String), LlmError> {
    let unparseable = || LlmError::Unparseable(text.chars().take(200).collect());
    let obj = first_json_object(text).ok_or_else(unparseable)?;
    if obj.len() != 2 {
        return Err(unparseable());
    }
    let result = obj.get("result").and_then(Value::as_str).ok_or_else(unparseable)?;
    let analysis = obj.get("analysis").and_then(Value::as_str).ok_or_else(unparseable)?;
    Ok((result.trim().to_ascii_lowercase(), analysis.to_string()))
}

pub fn parse_verdict(text: &str) -> Result<Verdict, LlmError> {
    let (result, analysis) = result_and_analysis(text)?;
    let result = match result.as_str() {
        "yes" => VerdictResult::Yes,
        "no" => VerdictResult::No,
        _ => return Err(LlmError::Unparseable(text.chars().take(200).collect())),
    };
    Ok(Verdict { result, analysis, raw: text.to_string() })
}

pub fn parse_scope_verdict(text: &str) -> Result<ScopeVerdict, LlmError> {
    let (result, analysis) = result_and_analysis(text)?;
    let result = match result.as_str() {
        "intra" | "intra-procedural" | "intraprocedural" => ScopeResult::Intra,
        "inter" | "inter-procedural" | "interprocedural" => ScopeResult::Inter,
        _ => return Err(LlmError::Unparseable(text.chars().take(200).collect())),
    };
    Ok(ScopeVerdict { result, analysis })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLogEntry {
    pub kind: PromptKind,
    pub prompt_hash: String,
    pub backend_identity: String,
    pub template_version: String,
    /// Calls made, including retries after unparseable answers.
    pub attempts: usize,
}

/// Sends `prompt` and parses the answer, retrying with a JSON reminder when
/// the answer cannot be parsed.
pub fn ask<T>(
    backend: &dyn LlmBackend,
    prompt: &Prompt,
    parse: impl Fn(&str) -> Result<T, LlmError>,
) -> Result<(T, PromptLogEntry), LlmError> {
    let text = prompt.render();
    let mut entry = PromptLogEntry {
        kind: prompt.kind,
        prompt_hash: prompt.hash(),
        backend_identity: backend.identity(),
        template_version: TEMPLATE_VERSION.to_string(),
        attempts: 0,
    };
    let mut last = String::new();
    for attempt in 0..=VERDICT_RETRIES {
        entry.attempts = attempt + 1;
        let answer = if attempt == 0 { backend.complete(&text)? } else { backend.complete(&format!("{text}{JSON_REMINDER}"))? };
        match parse(&answer) {
            Ok(v) => return Ok((v, entry)),
            Err(e) => last = e.to_string(),
        }
    }
    Err(LlmError::Exhausted { attempts: VERDICT_RETRIES + 1, last })
}

/// Free-text completion (the describe step).
pub fn ask_text(backend: &dyn LlmBackend, prompt: &Prompt) -> Result<(String, PromptLogEntry), LlmError> {
    ask(backend, prompt, |s| Ok(s.trim().to_string()))
}
