//! Orchestration behind the command-line tool: configuration, workspace
//! validation, ranking, evaluation and report emission.

mod config;
mod fixture;
mod output;
mod run;
mod workspace;

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

pub use config::{
    CheckpointStep, Depth, Method, PromptSeedPolicy, RunConfig, DEFAULT_MASTER_SEED, DEFAULT_TRIALS,
};
pub use fixture::{
    export_fixture, FixtureOptions, FixtureSummary, FIXTURE_ENCODER, FIXTURE_PROMPT_SEED, FIXTURE_SEEDS, FIXTURE_STEP,
};
pub use output::{
    read_metrics, render_markdown, write_bundle, write_plot_data, write_rankings, write_report, RunMeta,
    GAINS_FILE, METRICS_FILE, RANKINGS_FILE, REPORT_FILE, RUN_META_FILE, SUMMARY_FILE,
};
pub use run::{compute_rankings, evaluate};
pub use workspace::{PromptRef, Workspace};

/// Environment variable that caps the worker pool size.
pub const THREADS_ENV: &str = "TASKRANK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum DiagnosticKind {
    Config,
    Schema,
    UnknownTask,
    MissingArtifact,
    MissingEntry,
    MissingBaseline,
    DimensionMismatch,
    InvariantViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    pub fn new(kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("validation failed with {} problem(s)", .0.len())]
    Validation(Vec<Diagnostic>),
    #[error("{0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: no metrics found, run eval first", path.display())]
    MissingMetrics { path: PathBuf },
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        PipelineError::Validation(vec![Diagnostic::new(DiagnosticKind::Config, message)])
    }

    /// Process exit status: 2 validation, 3 runtime data, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Data(_) | PipelineError::Output { .. } | PipelineError::MissingMetrics { .. } => 3,
            PipelineError::Internal(_) => 4,
        }
    }
}

/// Worker count from `TASKRANK_THREADS`, or `None` for the rayon default.
pub fn threads_from_env() -> Result<Option<usize>, PipelineError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(PipelineError::config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (available parallelism
/// when `None`).
pub fn with_pool<R: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<R, PipelineError> + Send,
) -> Result<R, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Internal(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}
