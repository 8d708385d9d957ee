//! Ground-truth rankings, nDCG, Regret@k, best-of-top-k transfer gains, and
//! per-category aggregation.

mod aggregate;
mod dcg;
mod gains;
mod ranking;
mod truth;

pub use aggregate::{
    aggregate_report, AggregateContext, EvalReport, GainRow, GroupMetrics, RandomSettings, TargetMetrics,
    TargetResult, ALL_CATEGORIES,
};
pub use dcg::{dcg, ndcg, MAX_RELEVANCE};
pub use gains::{best_of_top_k, regret_at_k, TransferGain};
pub use ranking::{RankedItem, Ranking};
pub use truth::{baseline_mean, ground_truth_ranking, mean_transfer, RelevanceVector, SeedPolicy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no-transfer baseline {0} must be positive")]
    NonPositiveBaseline(f64),
    #[error("missing transfer entry ({source_id}, {target_id}, seed {})", seed.map_or("any".to_string(), |s| s.to_string()))]
    MissingEntry {
        source_id: String,
        target_id: String,
        seed: Option<u64>,
    },
    #[error("missing no-transfer baseline for target {target_id}, seed {}", seed.map_or("any".to_string(), |s| s.to_string()))]
    MissingBaseline { target_id: String, seed: Option<u64> },
    #[error("relevance {0} exceeds the 2^rel overflow guard")]
    RelevanceOverflow(f64),
    #[error("negative relevance {0}")]
    NegativeRelevance(f64),
    #[error("ranking depth {p} invalid for {len} items")]
    BadDepth { p: usize, len: usize },
    #[error("target {target_id}: predicted and true rankings cover different sources")]
    SourceSetMismatch { target_id: String },
    #[error("target {target_id}: ideal DCG is zero (all relevances zero)")]
    DegenerateIdeal { target_id: String },
    #[error("k = {k} invalid for {len} sources")]
    BadK { k: usize, len: usize },
    #[error("target {target_id}: best relevance is not positive")]
    DegenerateRelevance { target_id: String },
    #[error("incomplete results, missing: {}", missing.join(", "))]
    IncompleteResults { missing: Vec<String> },
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
}

/// Relative transfer performance in percent: `100 · (m_st − m_t) / m_t`.
pub fn relative_transfer(m_st: f64, m_t: f64) -> Result<f64, MetricError> {
    if m_t <= 0.0 || !m_t.is_finite() {
        return Err(MetricError::NonPositiveBaseline(m_t));
    }
    Ok(100.0 * (m_st - m_t) / m_t)
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
