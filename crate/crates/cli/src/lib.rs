//! Config-driven experiment runner for `quasidyn`.
//!
//! Each run reads one JSON config, writes CSV/JSON artifacts into the
//! output directory and a `manifest.json` echoing the resolved config.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

pub use config::{Command, ExperimentConfig};

/// Environment variable overriding `output_dir`.
pub const OUT_ENV: &str = "QUASIDYN_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] quasidyn::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for precondition errors, 3 for unconverged numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(e) if e.is_unconverged() => 3,
            _ => 2,
        }
    }
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    config::parse_json(&text, &path.display().to_string())
}

/// Output directory after applying the environment override.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir.clone(),
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    run_in(cfg, &resolve_output_dir(cfg))
}

/// Run with an explicit output directory.
pub fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let artifacts = pool.install(|| commands::execute(cfg))?;
    output::write_all(cfg, dir, artifacts)
}
