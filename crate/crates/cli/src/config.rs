//! Layered configuration: command-line flags, then environment variables,
//! then a TOML or JSON file, then built-in defaults. Each key is resolved
//! independently.

use std::path::{Path, PathBuf};
use std::time::Duration;

use commitshield::forge::{ForgeConfig, Secret, DEFAULT_API_BASE, TOKEN_ENV};
use commitshield::llm::{TokenBudget, LLM_KEY_ENV};
use commitshield::model::ContextExtensionPolicy;
use commitshield::pipeline::{PipelineConfig, DEFAULT_VID_WINDOW};
use commitshield::repo::DEFAULT_MAX_COMMITS;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

/// One configuration source. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layer {
    pub api_base_url: Option<String>,
    pub forge_token: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub offline: Option<bool>,
    /// Serve forge requests from git repositories under this directory.
    pub local_forge: Option<PathBuf>,
    pub clone_url_template: Option<String>,
    pub llm_backend: Option<BackendKind>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub llm_key: Option<String>,
    pub scenario_file: Option<PathBuf>,
    pub max_tokens: Option<usize>,
    pub workdir_root: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub small_threshold: Option<u32>,
    pub large_threshold: Option<u32>,
    pub vid_window: Option<usize>,
    pub max_commits: Option<usize>,
    pub follow_renames: Option<bool>,
}

/// File layout: nested tables mirroring [`CliConfig`].
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    forge: FileForge,
    llm: FileLlm,
    budget: FileBudget,
    workdir_root: Option<PathBuf>,
    concurrency: Option<usize>,
    policy: FilePolicy,
    vid: FileVid,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileForge {
    api_base_url: Option<String>,
    cache_dir: Option<PathBuf>,
    offline: Option<bool>,
    local_root: Option<PathBuf>,
    clone_url_template: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileLlm {
    backend: Option<BackendKind>,
    endpoint: Option<String>,
    model: Option<String>,
    scenario_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileBudget {
    max_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FilePolicy {
    small_threshold: Option<u32>,
    large_threshold: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileVid {
    window: Option<usize>,
    max_commits: Option<usize>,
    follow_renames: Option<bool>,
}

impl Layer {
    /// Reads a config file; `.json` files are JSON, anything else TOML.
    /// Relative paths inside the file are taken from the file's directory.
    pub fn from_file(path: &Path) -> Result<Layer, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let f: FileConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: Option<PathBuf>| p.map(|p| base.join(p));
        Ok(Layer {
            api_base_url: f.forge.api_base_url,
            forge_token: None,
            cache_dir: rel(f.forge.cache_dir),
            offline: f.forge.offline,
            local_forge: rel(f.forge.local_root),
            clone_url_template: f.forge.clone_url_template,
            llm_backend: f.llm.backend,
            llm_endpoint: f.llm.endpoint,
            llm_model: f.llm.model,
            llm_key: None,
            scenario_file: rel(f.llm.scenario_file),
            max_tokens: f.budget.max_tokens,
            workdir_root: rel(f.workdir_root),
            concurrency: f.concurrency,
            small_threshold: f.policy.small_threshold,
            large_threshold: f.policy.large_threshold,
            vid_window: f.vid.window,
            max_commits: f.vid.max_commits,
            follow_renames: f.vid.follow_renames,
        })
    }

    /// Reads `COMMITSHIELD_*` variables through `get`.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Layer, ConfigError> {
        let get = |k: &str| get(k).filter(|v| !v.is_empty());
        fn parse<T: std::str::FromStr>(k: &str, v: Option<String>) -> Result<Option<T>, ConfigError> {
            v.map(|v| v.parse::<T>().map_err(|_| ConfigError(format!("{k}={v:?} is not valid")))).transpose()
        }
        let flag = |k: &str| -> Result<Option<bool>, ConfigError> {
            get(k)
                .map(|v| match v.to_ascii_lowercase().as_str() {
                    "1" | "true" | "yes" | "on" => Ok(true),
                    "0" | "false" | "no" | "off" => Ok(false),
                    _ => Err(ConfigError(format!("{k}={v:?} is not a boolean"))),
                })
                .transpose()
        };
        let backend = match get("COMMITSHIELD_LLM_BACKEND").as_deref() {
            None => None,
            Some("http") => Some(BackendKind::Http),
            Some("mock") => Some(BackendKind::Mock),
            Some(v) => return Err(ConfigError(format!("COMMITSHIELD_LLM_BACKEND={v:?} is not http or mock"))),
        };
        Ok(Layer {
            api_base_url: get("COMMITSHIELD_API_BASE"),
            forge_token: get(TOKEN_ENV),
            cache_dir: get("COMMITSHIELD_CACHE_DIR").map(PathBuf::from),
            offline: flag("COMMITSHIELD_OFFLINE")?,
            local_forge: get("COMMITSHIELD_LOCAL_FORGE").map(PathBuf::from),
            clone_url_template: get("COMMITSHIELD_CLONE_URL"),
            llm_backend: backend,
            llm_endpoint: get("COMMITSHIELD_LLM_ENDPOINT"),
            llm_model: get("COMMITSHIELD_LLM_MODEL"),
            llm_key: get(LLM_KEY_ENV),
            scenario_file: get("COMMITSHIELD_SCENARIO").map(PathBuf::from),
            max_tokens: parse("COMMITSHIELD_MAX_TOKENS", get("COMMITSHIELD_MAX_TOKENS"))?,
            workdir_root: get("COMMITSHIELD_WORKDIR").map(PathBuf::from),
            concurrency: parse("COMMITSHIELD_CONCURRENCY", get("COMMITSHIELD_CONCURRENCY"))?,
            small_threshold: parse("COMMITSHIELD_SMALL_THRESHOLD", get("COMMITSHIELD_SMALL_THRESHOLD"))?,
            large_threshold: parse("COMMITSHIELD_LARGE_THRESHOLD", get("COMMITSHIELD_LARGE_THRESHOLD"))?,
            vid_window: parse("COMMITSHIELD_VID_WINDOW", get("COMMITSHIELD_VID_WINDOW"))?,
            max_commits: parse("COMMITSHIELD_MAX_COMMITS", get("COMMITSHIELD_MAX_COMMITS"))?,
            follow_renames: flag("COMMITSHIELD_FOLLOW_RENAMES")?,
        })
    }

    /// Key by key, the first layer that sets it wins.
    pub fn merge(layers: &[&Layer]) -> Layer {
        macro_rules! pick {
            ($($f:ident),*) => { Layer { $($f: layers.iter().find_map(|l| l.$f.clone()),)* } };
        }
        pick!(
            api_base_url, forge_token, cache_dir, offline, local_forge, clone_url_template, llm_backend, llm_endpoint,
            llm_model, llm_key, scenario_file, max_tokens, workdir_root, concurrency, small_threshold, large_threshold,
            vid_window, max_commits, follow_renames
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmSettings {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub key: Option<String>,
    pub scenario_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VidSettings {
    pub window: usize,
    pub max_commits: usize,
    pub follow_renames: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub forge: ForgeConfig,
    pub local_forge: Option<PathBuf>,
    pub clone_url_template: String,
    pub llm: LlmSettings,
    pub budget: TokenBudget,
    pub workdir_root: PathBuf,
    pub concurrency: usize,
    pub policy: ContextExtensionPolicy,
    pub vid: VidSettings,
}

pub fn default_data_dir() -> PathBuf {
    std::env::var_os("XDG_CACHE_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache")))
        .unwrap_or_else(|| PathBuf::from("."))
        .join("commitshield")
}

impl CliConfig {
    /// Fills defaults and checks cross-key rules. `needs_llm` is false for
    /// commands that never call a model.
    pub fn resolve(l: Layer, needs_llm: bool) -> Result<CliConfig, ConfigError> {
        let data = default_data_dir();
        let mut forge = ForgeConfig::new(l.cache_dir.unwrap_or_else(|| data.join("cache")));
        forge.api_base_url = l.api_base_url.unwrap_or_else(|| DEFAULT_API_BASE.to_string());
        forge.auth_token = l.forge_token.map(Secret::new);
        forge.offline = l.offline.unwrap_or(false);
        forge.request_timeout = Duration::from_secs(30);

        let clone_url_template = match (l.clone_url_template, &l.local_forge) {
            (Some(t), _) => t,
            (None, Some(root)) => format!("{}/{{slug}}", root.display()),
            (None, None) => "https://github.com/{slug}.git".to_string(),
        };
        if !clone_url_template.contains("{slug}") {
            return Err(ConfigError(format!("clone url template {clone_url_template:?} lacks {{slug}}")));
        }

        let llm = LlmSettings {
            backend: l.llm_backend.unwrap_or(BackendKind::Http),
            endpoint: l.llm_endpoint,
            model: l.llm_model,
            key: l.llm_key,
            scenario_file: l.scenario_file,
        };
        if needs_llm {
            match llm.backend {
                BackendKind::Mock if llm.scenario_file.is_none() => {
                    return Err(ConfigError("the mock backend needs a scenario file (--scenario)".into()))
                }
                BackendKind::Http if llm.endpoint.is_none() || llm.model.is_none() => {
                    return Err(ConfigError("the http backend needs an endpoint and a model (--llm-endpoint, --llm-model)".into()))
                }
                _ => {}
            }
        }

        let budget = TokenBudget::new(l.max_tokens.unwrap_or(commitshield::llm::DEFAULT_MAX_TOKENS))
            .ok_or_else(|| ConfigError("max tokens must be positive".into()))?;
        let d = ContextExtensionPolicy::default();
        let (small, large) = (l.small_threshold.unwrap_or(d.small_threshold), l.large_threshold.unwrap_or(d.large_threshold));
        let policy = ContextExtensionPolicy::new(small, large)
            .ok_or_else(|| ConfigError(format!("extension thresholds must satisfy 0 < small < large (got {small}, {large})")))?;
        let concurrency = l.concurrency.unwrap_or(1);
        if concurrency == 0 {
            return Err(ConfigError("concurrency must be at least 1".into()));
        }
        let vid = VidSettings {
            window: l.vid_window.unwrap_or(DEFAULT_VID_WINDOW),
            max_commits: l.max_commits.unwrap_or(DEFAULT_MAX_COMMITS),
            follow_renames: l.follow_renames.unwrap_or(false),
        };
        if vid.max_commits == 0 {
            return Err(ConfigError("max commits must be at least 1".into()));
        }
        Ok(CliConfig {
            forge,
            local_forge: l.local_forge,
            clone_url_template,
            llm,
            budget,
            workdir_root: l.workdir_root.unwrap_or_else(|| data.join("work")),
            concurrency,
            policy,
            vid,
        })
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            budget: self.budget,
            policy: self.policy,
            vid_window: self.vid.window,
            max_commits: self.vid.max_commits,
            follow_renames: self.vid.follow_renames,
        }
    }
}
