//! Loading and validating on-disk artifacts: prompt matrices, sentence
//! embedding vectors, task manifests and transfer tables.

mod manifest;
pub mod ptns;
mod transfer;

use std::path::PathBuf;

pub use manifest::{
    load_manifest, ArtifactEntry, ArtifactIndex, ArtifactKind, Category, Manifest,
    ManifestDocument, PromptKey, Role, TaskRecord,
};
pub use ptns::{
    load_prompt_matrix, load_sentence_embedding, save_prompt_matrix, save_sentence_embedding,
    PtnsError,
};
pub use transfer::{load_transfer_table, TransferTable, NO_TRANSFER_SOURCE};

/// Prompt length used for every task in the reference setup. Other lengths
/// load with a warning.
pub const EXPECTED_PROMPT_TOKENS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Ptns {
        path: PathBuf,
        #[source]
        source: PtnsError,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("{}: duplicate task id {task_id:?}", path.display())]
    DuplicateTaskId { path: PathBuf, task_id: String },
    #[error("{}: artifact for task {task_id:?} not found at {}", manifest.display(), artifact.display())]
    MissingArtifact {
        manifest: PathBuf,
        task_id: String,
        artifact: PathBuf,
    },
    #[error("{}: schema error{}: {reason}", path.display(), line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        line: Option<u64>,
        reason: String,
    },
    #[error("{}: non-finite score {value:?} at line {line}", path.display())]
    NonFiniteScore {
        path: PathBuf,
        line: u64,
        value: String,
    },
}

/// One task's soft-prompt weights: `rows` prompt tokens of `cols` features,
/// stored row-major. Held in f64 even though the on-disk payload is f32.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMatrix {
    task_id: String,
    seed: u64,
    step: u64,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PromptMatrix {
    pub fn new(
        task_id: impl Into<String>,
        seed: u64,
        step: u64,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorIoError> {
        let m = Self {
            task_id: task_id.into(),
            seed,
            step,
            rows,
            cols,
            data,
        };
        m.validate()?;
        Ok(m)
    }

    /// Convenience constructor for tests and fixtures; seed and step are 0.
    pub fn from_rows(task_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self, TensorIoError> {
        let task_id = task_id.into();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorIoError::InvariantViolation(format!(
                "task {task_id}: ragged rows"
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(task_id, 0, 0, rows.len(), cols, data)
    }

    pub(crate) fn validate(&self) -> Result<(), TensorIoError> {
        let fail = |why: String| {
            Err(TensorIoError::InvariantViolation(format!(
                "task {}: {why}",
                self.task_id
            )))
        };
        if self.rows == 0 || self.cols == 0 {
            return fail(format!("shape {}x{} has a zero dimension", self.rows, self.cols));
        }
        if self.data.len() != self.rows * self.cols {
            return fail(format!(
                "{} values for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            ));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return fail(format!(
                "non-finite entry at row {}, col {}",
                i / self.cols,
                i % self.cols
            ));
        }
        Ok(())
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }
}

/// Dataset-mean sentence vector produced by one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbeddingVec {
    task_id: String,
    encoder_id: String,
    data: Vec<f64>,
}

impl SentenceEmbeddingVec {
    pub fn new(
        task_id: impl Into<String>,
        encoder_id: impl Into<String>,
        data: Vec<f64>,
    ) -> Result<Self, TensorIoError> {
        let task_id = task_id.into();
        if data.is_empty() {
            return Err(TensorIoError::InvariantViolation(format!(
                "task {task_id}: empty sentence embedding"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorIoError::InvariantViolation(format!(
                "task {task_id}: non-finite sentence embedding"
            )));
        }
        Ok(Self {
            task_id,
            encoder_id: encoder_id.into(),
            data,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
