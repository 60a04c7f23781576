//! Experiment runner: TOML configs in, CSV/JSON tables and a manifest out.

pub mod config;
pub mod describe;
pub mod output;
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("unknown task `{name}`; valid tasks: {valid}")]
    UnknownTask { name: String, valid: String },

    #[error("task failed: {0}")]
    Task(#[from] fwmeta::Error),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::UnknownTask { .. } => 1,
            CliError::Task(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Serialize)]
struct OutputEntry<'a> {
    file: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    task: &'a str,
    config: String,
    config_hash: &'a str,
    version: &'a str,
    workers: usize,
    started_unix: u64,
    wall_time_seconds: f64,
    outputs: Vec<OutputEntry<'a>>,
}

pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

/// Loads, validates and runs one config.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let loaded = config::load(config_path)?;
    let dir = match &overrides.output_dir {
        Some(d) => d.clone(),
        None if loaded.config.output.directory.is_relative() => config_path
            .parent()
            .map(|p| p.join(&loaded.config.output.directory))
            .unwrap_or_else(|| loaded.config.output.directory.clone()),
        None => loaded.config.output.directory.clone(),
    };
    let workers = overrides.workers.unwrap_or_else(rayon::current_num_threads);
    if workers == 0 {
        return Err(CliError::Config {
            field: "--workers".into(),
            message: "must be at least 1".into(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = output::OutputDir::create(&dir, loaded.config.wants("csv"), loaded.config.wants("json"))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    pool.install(|| tasks::run_task(&loaded, &mut out))?;
    let manifest = Manifest {
        task: &loaded.config.task.name,
        config: config_path.display().to_string(),
        config_hash: &loaded.hash,
        version: VERSION,
        workers,
        started_unix: started,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
        outputs: out
            .files()
            .iter()
            .map(|(f, h)| OutputEntry { file: f, sha256: h })
            .collect(),
    };
    out.manifest(&manifest)?;
    Ok(RunSummary {
        output_dir: dir,
        files: out.files().iter().map(|(f, _)| f.clone()).collect(),
    })
}
