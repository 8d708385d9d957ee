//! Task-to-task transferability scores: cosine-based embedding similarities
//! (Feature, Unigram, SEmb), token-wise Max similarity, and the
//! embedding-free Size and Random baselines.

mod baselines;
mod max;

use crate::tensor_io::{PromptMatrix, SentenceEmbeddingVec};

pub use baselines::{random_ranking, size_score};
pub use max::{
    max_similarity, max_similarity_brute_force, max_similarity_matrix, max_similarity_normalized,
    max_similarity_with,
    MaxOptions, NormalizedRows,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: String,
        left: usize,
        right: usize,
    },
    #[error("cosine undefined: {0} is a zero vector")]
    ZeroVector(String),
    #[error("task {task_id}: prompt row {row} has zero norm")]
    ZeroRow { task_id: String, row: usize },
    #[error("encoder mismatch: {left:?} vs {right:?}")]
    EncoderMismatch { left: String, right: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("empty source set")]
    EmptySourceSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Mean over prompt tokens, length `d`.
    FeatureVec,
    /// Mean over feature dimensions per token, length `N`.
    UnigramVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEmbedding {
    pub task_id: String,
    pub kind: EmbeddingKind,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScore {
    pub source_id: String,
    pub target_id: String,
    pub method_id: String,
    pub value: f64,
}

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (tree) summation; sequential below a small block size.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// Dot product with the same tree reduction as [`pairwise_sum`].
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= PAIRWISE_BLOCK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let mid = a.len() / 2;
    dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..])
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped into `[-1, 1]`.
///
/// Elementwise products and the reduction tree are symmetric in the two
/// arguments, so `cosine(a, b) == cosine(b, a)` bit for bit.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch {
            what: "cosine operands".into(),
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(SimilarityError::ZeroVector("left operand".into()));
    }
    if nb == 0.0 {
        return Err(SimilarityError::ZeroVector("right operand".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn named_cosine(a: &TaskEmbedding, b: &TaskEmbedding) -> Result<f64, SimilarityError> {
    cosine(&a.data, &b.data).map_err(|e| match e {
        SimilarityError::ZeroVector(side) => {
            let id = if side.starts_with("left") { &a.task_id } else { &b.task_id };
            SimilarityError::ZeroVector(format!("embedding of task {id}"))
        }
        other => other,
    })
}

/// Column means: the average prompt token, a vector in `R^d`.
pub fn feature_embedding(m: &PromptMatrix) -> TaskEmbedding {
    let mut acc = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = m.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    TaskEmbedding {
        task_id: m.task_id().to_string(),
        kind: EmbeddingKind::FeatureVec,
        data: acc,
    }
}

/// Row means: one value per prompt token, a vector in `R^N`.
pub fn unigram_embedding(m: &PromptMatrix) -> TaskEmbedding {
    let d = m.cols() as f64;
    TaskEmbedding {
        task_id: m.task_id().to_string(),
        kind: EmbeddingKind::UnigramVec,
        data: m.iter_rows().map(|r| pairwise_sum(r) / d).collect(),
    }
}

fn score(src: &str, tgt: &str, method: &str, value: f64) -> SimilarityScore {
    SimilarityScore {
        source_id: src.to_string(),
        target_id: tgt.to_string(),
        method_id: method.to_string(),
        value,
    }
}

pub fn feature_similarity(
    src: &PromptMatrix,
    tgt: &PromptMatrix,
) -> Result<SimilarityScore, SimilarityError> {
    if src.cols() != tgt.cols() {
        return Err(SimilarityError::DimensionMismatch {
            what: format!("feature dim of {} vs {}", src.task_id(), tgt.task_id()),
            left: src.cols(),
            right: tgt.cols(),
        });
    }
    let value = named_cosine(&feature_embedding(src), &feature_embedding(tgt))?;
    Ok(score(src.task_id(), tgt.task_id(), "feature", value))
}

pub fn unigram_similarity(
    src: &PromptMatrix,
    tgt: &PromptMatrix,
) -> Result<SimilarityScore, SimilarityError> {
    if src.rows() != tgt.rows() {
        return Err(SimilarityError::DimensionMismatch {
            what: format!("prompt length of {} vs {}", src.task_id(), tgt.task_id()),
            left: src.rows(),
            right: tgt.rows(),
        });
    }
    let value = named_cosine(&unigram_embedding(src), &unigram_embedding(tgt))?;
    Ok(score(src.task_id(), tgt.task_id(), "unigram", value))
}

pub fn semb_similarity(
    src: &SentenceEmbeddingVec,
    tgt: &SentenceEmbeddingVec,
) -> Result<SimilarityScore, SimilarityError> {
    if src.encoder_id() != tgt.encoder_id() {
        return Err(SimilarityError::EncoderMismatch {
            left: src.encoder_id().to_string(),
            right: tgt.encoder_id().to_string(),
        });
    }
    if src.dim() != tgt.dim() {
        return Err(SimilarityError::DimensionMismatch {
            what: format!("sentence embedding dim of {} vs {}", src.task_id(), tgt.task_id()),
            left: src.dim(),
            right: tgt.dim(),
        });
    }
    let value = cosine(src.data(), tgt.data()).map_err(|e| match e {
        SimilarityError::ZeroVector(side) => {
            let id = if side.starts_with("left") { src.task_id() } else { tgt.task_id() };
            SimilarityError::ZeroVector(format!("sentence embedding of task {id}"))
        }
        other => other,
    })?;
    Ok(score(
        src.task_id(),
        tgt.task_id(),
        &format!("semb:{}", src.encoder_id()),
        value,
    ))
}
