use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{prompt_identity, LlmError, PromptKind};

pub const LLM_KEY_ENV: &str = "COMMITSHIELD_LLM_KEY";
const MOCK_DEFAULT: &str = r#"{"result":"no","analysis":"default"}"#;

/// Unscripted answer: no verdicts, intra scopes, and an empty description
/// (the pipelines then keep the commit message).
fn default_answer(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::Describe => "",
        PromptKind::Scope => r#"{"result":"intra","analysis":"default"}"#,
        _ => MOCK_DEFAULT,
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
    fn identity(&self) -> String;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scripted {
    One(String),
    /// Answers in call order; the last one repeats.
    Seq(Vec<String>),
}

/// Scripted backend: answers are looked up by `"<kind>:<key>"`, where the
/// kind and key come from the prompt's first line.
#[derive(Debug, Default)]
pub struct MockBackend {
    responses: HashMap<String, Scripted>,
    calls: Mutex<HashMap<String, usize>>,
    total: AtomicUsize,
}

impl MockBackend {
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let bytes = std::fs::read(path).map_err(|e| LlmError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let responses: HashMap<String, Scripted> = serde_json::from_str(text).map_err(|e| LlmError::Scenario(e.to_string()))?;
        for key in responses.keys() {
            let kind = key.split_once(':').map_or(key.as_str(), |(k, _)| k);
            if PromptKind::parse(kind).is_none() {
                return Err(LlmError::Scenario(format!("unknown prompt kind in {key:?}")));
            }
        }
        Ok(MockBackend { responses, ..Default::default() })
    }

    pub fn with(mut self, kind: PromptKind, key: &str, response: &str) -> Self {
        self.responses.insert(format!("{}:{key}", kind.as_str()), Scripted::One(response.to_string()));
        self
    }

    pub fn call_count(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.total.fetch_add(1, Ordering::SeqCst);
        let Some((kind, key)) = prompt_identity(prompt) else { return Ok(MOCK_DEFAULT.to_string()) };
        let k = format!("{}:{key}", kind.as_str());
        let n = {
            let mut calls = self.calls.lock().unwrap();
            let c = calls.entry(k.clone()).or_insert(0);
            *c += 1;
            *c - 1
        };
        Ok(match self.responses.get(&k) {
            Some(Scripted::One(s)) => s.clone(),
            Some(Scripted::Seq(v)) if !v.is_empty() => v[n.min(v.len() - 1)].clone(),
            _ => default_answer(kind).to_string(),
        })
    }

    fn identity(&self) -> String {
        "mock".to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpBackendConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Reported in prompt logs; defaults to the model name.
    pub name: Option<String>,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub seed: u64,
}

impl HttpBackendConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            name: None,
            max_in_flight: 4,
            timeout: Duration::from_secs(300),
            seed: 42,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible chat-completions client. Temperature is 0 and a fixed
/// seed is sent for repeatability.
pub struct HttpBackend {
    cfg: HttpBackendConfig,
    key: String,
    client: reqwest::blocking::Client,
    gate: Semaphore,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig, key: Option<String>) -> Result<Self, LlmError> {
        let key = key.or_else(|| std::env::var(LLM_KEY_ENV).ok()).filter(|k| !k.is_empty()).ok_or(LlmError::MissingKey)?;
        let client = reqwest::blocking::Client::builder().timeout(cfg.timeout).build().map_err(|e| LlmError::Backend(e.to_string()))?;
        let gate = Semaphore { free: Mutex::new(cfg.max_in_flight.max(1)), cv: Condvar::new() };
        Ok(HttpBackend { cfg, key, client, gate })
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "seed": self.cfg.seed,
            "stream": false,
        })
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let _permit = self.gate.acquire();
        let mut delay = Duration::from_secs(2);
        for attempt in 0..=3 {
            let resp = self.client.post(&self.cfg.endpoint).bearer_auth(&self.key).json(&self.request_body(prompt)).send();
            let retryable = match resp {
                Ok(r) if r.status().is_success() => {
                    let v: Value = r.json().map_err(|e| LlmError::Backend(e.to_string()))?;
                    return v["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| LlmError::Backend(format!("no message content in response: {v}")));
                }
                Ok(r) if r.status().as_u16() == 429 || r.status().is_server_error() => format!("HTTP {}", r.status()),
                Ok(r) => return Err(LlmError::Backend(format!("HTTP {}: {}", r.status(), r.text().unwrap_or_default()))),
                Err(e) if e.is_timeout() || e.is_connect() => e.to_string(),
                Err(e) => return Err(LlmError::Backend(e.to_string())),
            };
            if attempt == 3 {
                return Err(LlmError::Backend(retryable));
            }
            log::warn!("model endpoint: {retryable}; retrying in {delay:?}");
            std::thread::sleep(delay);
            delay *= 2;
        }
        unreachable!()
    }

    fn identity(&self) -> String {
        self.cfg.name.clone().unwrap_or_else(|| self.cfg.model.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ask, parse_verdict, Prompt, Section};

    fn prompt(kind: PromptKind, key: &str) -> Prompt {
        Prompt::new(kind, key, vec![Section::new("task", 0, "answer")])
    }

    #[test]
    fn mock_lookup_and_default() {
        let m = MockBackend::from_json(r#"{"vfd_final:abc1234": "{\"result\":\"yes\",\"analysis\":\"fix\"}"}"#).unwrap();
        let yes = m.complete(&prompt(PromptKind::VfdFinal, "abc1234").render()).unwrap();
        assert!(parse_verdict(&yes).unwrap().is_yes());
        let other = m.complete(&prompt(PromptKind::Relevance, "abc1234:a.c").render()).unwrap();
        assert_eq!(other, MOCK_DEFAULT);
        assert_eq!(m.call_count(), 2);
        assert!(MockBackend::from_json(r#"{"bogus:x": "y"}"#).is_err());
    }

    #[test]
    fn retries_with_reminder_then_gives_up() {
        let m = MockBackend::from_json(r#"{"scope:k": ["prose", "more prose", "{\"result\":\"no\",\"analysis\":\"ok\"}"]}"#).unwrap();
        let (v, log) = ask(&m, &prompt(PromptKind::Scope, "k"), parse_verdict).unwrap();
        assert!(!v.is_yes());
        assert_eq!(log.attempts, 3);
        let m = MockBackend::from_json(r#"{"scope:k": "never json"}"#).unwrap();
        assert!(matches!(ask(&m, &prompt(PromptKind::Scope, "k"), parse_verdict), Err(LlmError::Exhausted { attempts: 4, .. })));
        assert_eq!(m.call_count(), 4);
    }

    #[test]
    fn http_backend_needs_a_key() {
        std::env::remove_var(LLM_KEY_ENV);
        assert!(matches!(HttpBackend::new(HttpBackendConfig::new("http://127.0.0.1:9/v1", "m"), None), Err(LlmError::MissingKey)));
        let b = HttpBackend::new(HttpBackendConfig::new("http://127.0.0.1:9/v1", "deepseek-chat"), Some("k".into())).unwrap();
        assert_eq!(b.identity(), "deepseek-chat");
        assert_eq!(b.request_body("hi")["temperature"], 0);
    }
}
