//! The `commitshield` command line.
//!
//! Data goes to standard output (or `--out`), diagnostics to standard error.
//! Exit codes: 0 success, 1 analysis error, 2 usage or configuration error,
//! 3 network or rate-limit exhaustion.

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use commitshield::eval::{self, EvalError, MetricsReport, RunOptions};
use commitshield::forge::local::LocalForge;
use commitshield::forge::{ForgeClient, ForgeError};
use commitshield::llm::{HttpBackend, HttpBackendConfig, LlmBackend, LlmError, MockBackend};
pub use commitshield::model::parse_commit_url;
use commitshield::model::{to_versioned_json, CommitRef};
use commitshield::pipeline::{Pipeline, PipelineError};
use commitshield::repo::RepoManager;

use config::{BackendKind, CliConfig, ConfigError, Layer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANALYSIS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NETWORK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "commitshield", version, about = "Vulnerability fix and introduction detection for commits")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Serve only from the response cache and existing clones.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub llm: Option<BackendKind>,
    /// Scripted answers for the mock backend.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    pub llm_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    #[arg(long, global = true)]
    pub api_base: Option<String>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Answer forge requests from git repositories under this directory.
    #[arg(long, global = true)]
    pub local_forge: Option<PathBuf>,
    /// Clone URL with a `{slug}` placeholder.
    #[arg(long, global = true)]
    pub clone_url: Option<String>,
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_tokens: Option<usize>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true)]
    pub small_threshold: Option<u32>,
    #[arg(long, global = true)]
    pub large_threshold: Option<u32>,
    #[arg(long, global = true)]
    pub vid_window: Option<usize>,
    #[arg(long, global = true)]
    pub max_commits: Option<usize>,
    #[arg(long, global = true)]
    pub follow_renames: bool,
    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl GlobalArgs {
    fn layer(&self) -> Layer {
        Layer {
            api_base_url: self.api_base.clone(),
            cache_dir: self.cache_dir.clone(),
            offline: self.offline.then_some(true),
            local_forge: self.local_forge.clone(),
            clone_url_template: self.clone_url.clone(),
            llm_backend: self.llm,
            llm_endpoint: self.llm_endpoint.clone(),
            llm_model: self.llm_model.clone(),
            scenario_file: self.scenario.clone(),
            max_tokens: self.max_tokens,
            workdir_root: self.workdir.clone(),
            concurrency: self.concurrency,
            small_threshold: self.small_threshold,
            large_threshold: self.large_threshold,
            vid_window: self.vid_window,
            max_commits: self.max_commits,
            follow_renames: self.follow_renames.then_some(true),
            ..Default::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch a commit with its linked issues and comments into the cache.
    Fetch { commit: String },
    /// Decide whether a commit fixes a vulnerability.
    Vfd { commit: String },
    /// Trace a fix commit back to the commit that introduced the flaw.
    Vid { commit: String },
    /// Score a labeled dataset.
    Eval {
        #[command(subcommand)]
        task: EvalTask,
    },
    /// Inspect or clear the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Score recorded reports from this directory instead of running.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Save every report produced by a live run here.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum EvalTask {
    Vfd(EvalArgs),
    Vid(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Stats,
    Clear,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_USAGE, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(if e.is_network() { EXIT_NETWORK } else { EXIT_ANALYSIS }, e.to_string())
    }
}

impl From<ForgeError> for Failure {
    fn from(e: ForgeError) -> Self {
        Failure::new(if e.is_network() { EXIT_NETWORK } else { EXIT_ANALYSIS }, e.to_string())
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        let code = match e {
            LlmError::MissingKey | LlmError::Scenario(_) => EXIT_USAGE,
            _ => EXIT_ANALYSIS,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Schema { .. } => EXIT_USAGE,
            _ => EXIT_ANALYSIS,
        };
        Failure::new(code, e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_USAGE, e.to_string())
}

/// Process-level hooks the binary supplies.
pub struct Env<'a> {
    pub var: &'a dyn Fn(&str) -> Option<String>,
    pub stdout: &'a mut dyn std::io::Write,
    /// Set on interrupt.
    pub cancel: Arc<AtomicBool>,
}

/// Parses `argv` and runs the command, returning the exit code.
pub fn run(argv: &[String], env: Env<'_>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, env) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn load_config(g: &GlobalArgs, var: &dyn Fn(&str) -> Option<String>, needs_llm: bool) -> Result<CliConfig, Failure> {
    let flags = g.layer();
    let env = Layer::from_env(var)?;
    let file = match &g.config {
        Some(p) => Layer::from_file(p)?,
        None => Layer::default(),
    };
    Ok(CliConfig::resolve(Layer::merge(&[&flags, &env, &file]), needs_llm)?)
}

fn forge_client(cfg: &CliConfig) -> Result<ForgeClient, Failure> {
    match &cfg.local_forge {
        Some(root) if !cfg.forge.offline => {
            let mut fc = cfg.forge.clone();
            // the local transport ignores the token, but the client insists on one
            fc.auth_token.get_or_insert_with(|| commitshield::forge::Secret::new("local"));
            Ok(ForgeClient::with_transport(fc.clone(), Box::new(LocalForge::new(root.clone(), &fc.api_base_url))))
        }
        _ => Ok(ForgeClient::new(cfg.forge.clone())?),
    }
}

fn backend(cfg: &CliConfig) -> Result<Box<dyn LlmBackend>, Failure> {
    Ok(match cfg.llm.backend {
        BackendKind::Mock => Box::new(MockBackend::from_file(cfg.llm.scenario_file.as_deref().expect("checked by resolve"))?),
        BackendKind::Http => {
            let mut hc = HttpBackendConfig::new(cfg.llm.endpoint.as_deref().unwrap_or_default(), cfg.llm.model.as_deref().unwrap_or_default());
            hc.max_in_flight = cfg.concurrency.max(1);
            Box::new(HttpBackend::new(hc, cfg.llm.key.clone())?)
        }
    })
}

fn emit(out: Option<&Path>, stdout: &mut dyn std::io::Write, text: &str) -> Result<(), Failure> {
    let text = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::new(EXIT_ANALYSIS, format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::new(EXIT_ANALYSIS, e.to_string())),
    }
}

fn commit_arg(s: &str) -> Result<CommitRef, Failure> {
    parse_commit_url(s).map_err(usage)
}

fn execute(cli: &Cli, env: Env<'_>) -> Result<(), Failure> {
    let g = &cli.global;
    let needs_llm = match &cli.command {
        Command::Vfd { .. } | Command::Vid { .. } => true,
        Command::Eval { task: EvalTask::Vfd(a) | EvalTask::Vid(a) } => a.replay.is_none(),
        Command::Fetch { .. } | Command::Cache { .. } => false,
    };
    let cfg = load_config(g, env.var, needs_llm)?;
    let out = g.out.as_deref();
    let repos = || {
        RepoManager::new(cfg.workdir_root.clone()).with_clone_url_template(cfg.clone_url_template.clone()).offline(cfg.forge.offline)
    };
    match &cli.command {
        Command::Fetch { commit } => {
            let r = commit_arg(commit)?;
            let client = forge_client(&cfg)?;
            let (rec, warnings) = client.fetch_with_attachments(&r)?;
            for w in warnings {
                log::warn!("{w}");
            }
            emit(out, env.stdout, &to_versioned_json(&rec))
        }
        Command::Vfd { commit } | Command::Vid { commit } => {
            let r = commit_arg(commit)?;
            let (client, repos, llm) = (forge_client(&cfg)?, repos(), backend(&cfg)?);
            let p = Pipeline::new(&client, &repos, llm.as_ref(), cfg.pipeline());
            let json = match cli.command {
                Command::Vfd { .. } => to_versioned_json(&p.detect_fix(&r)?),
                _ => to_versioned_json(&p.detect_introduction(&r)?),
            };
            emit(out, env.stdout, &json)
        }
        Command::Eval { task } => {
            let (is_vfd, a) = match task {
                EvalTask::Vfd(a) => (true, a),
                EvalTask::Vid(a) => (false, a),
            };
            let m = if is_vfd { eval_vfd(&cfg, a, &env.cancel, &repos)? } else { eval_vid(&cfg, a, &env.cancel, &repos)? };
            if m.partial {
                log::warn!("interrupted: metrics cover only the samples analyzed so far");
                eprintln!("warning: interrupted; metrics are partial");
            }
            let text = match a.format {
                Format::Json => m.to_json(),
                Format::Table => m.render_table(),
            };
            emit(out, env.stdout, &text)
        }
        Command::Cache { action } => {
            let cache = commitshield::forge::DiskCache::new(cfg.forge.cache_dir.clone());
            match action {
                CacheAction::Stats => {
                    let s = cache.stats();
                    let v = serde_json::json!({"cache_dir": cfg.forge.cache_dir, "entries": s.entries, "bytes": s.bytes});
                    emit(out, env.stdout, &serde_json::to_string_pretty(&v).unwrap())
                }
                CacheAction::Clear => {
                    let before = cache.stats();
                    cache.clear().map_err(|e| Failure::new(EXIT_ANALYSIS, e.to_string()))?;
                    let v = serde_json::json!({"cache_dir": cfg.forge.cache_dir, "removed_entries": before.entries});
                    emit(out, env.stdout, &serde_json::to_string_pretty(&v).unwrap())
                }
            }
        }
    }
}

fn eval_vfd(cfg: &CliConfig, a: &EvalArgs, cancel: &AtomicBool, repos: &dyn Fn() -> RepoManager) -> Result<MetricsReport, Failure> {
    let samples = eval::load_vfd_dataset(&a.dataset)?;
    if let Some(dir) = &a.replay {
        return Ok(eval::score_vfd(&eval::replay_vfd(dir)?, &samples)?);
    }
    let (client, repos, llm) = (forge_client(cfg)?, repos(), backend(cfg)?);
    let p = Pipeline::new(&client, &repos, llm.as_ref(), cfg.pipeline());
    let opts = RunOptions { concurrency: cfg.concurrency, cancel, record_dir: a.record.as_deref() };
    let run = eval::run_vfd(&p, &samples, &opts)?;
    let done: Vec<_> = eval::completed(&samples, |s| &s.commit, &run.outcomes).into_iter().cloned().collect();
    let mut m = eval::score_vfd(&run.outcomes, &done)?;
    m.partial = run.interrupted;
    Ok(m)
}

fn eval_vid(cfg: &CliConfig, a: &EvalArgs, cancel: &AtomicBool, repos: &dyn Fn() -> RepoManager) -> Result<MetricsReport, Failure> {
    let samples = eval::load_vid_dataset(&a.dataset)?;
    if let Some(dir) = &a.replay {
        return Ok(eval::score_vid(&eval::replay_vid(dir)?, &samples)?);
    }
    let (client, repos, llm) = (forge_client(cfg)?, repos(), backend(cfg)?);
    let p = Pipeline::new(&client, &repos, llm.as_ref(), cfg.pipeline());
    let opts = RunOptions { concurrency: cfg.concurrency, cancel, record_dir: a.record.as_deref() };
    let run = eval::run_vid(&p, &samples, &opts)?;
    let done: Vec<_> = eval::completed(&samples, |s| &s.fix_commit, &run.outcomes).into_iter().cloned().collect();
    let mut m = eval::score_vid(&run.outcomes, &done)?;
    m.partial = run.interrupted;
    Ok(m)
}

/// Log level from `-v` count, unless `RUST_LOG` says otherwise.
pub fn log_level(argv: &[String]) -> log::LevelFilter {
    let short = |a: &String| if a.starts_with('-') && !a.starts_with("--") && a[1..].chars().all(|c| c == 'v') { a.len() - 1 } else { 0 };
    let v: usize = argv.iter().map(|a| if a == "--verbose" { 1 } else { short(a) }).sum();
    match v {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    }
}
