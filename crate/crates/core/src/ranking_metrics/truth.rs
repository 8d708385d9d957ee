use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{mean, MetricError, Ranking};
use crate::tensor_io::TransferTable;

/// How measured transfer scores are collapsed across transfer seeds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    #[default]
    MeanOverSeeds,
    SingleSeed(u64),
}

/// Graded relevance per source for one target. Negative measurements are
/// clamped to zero; the affected sources are listed in `clamped`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector {
    pub target_id: String,
    pub rel: BTreeMap<String, f64>,
    pub clamped: Vec<String>,
}

impl RelevanceVector {
    pub fn new(target_id: impl Into<String>, raw: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut clamped = Vec::new();
        let rel = raw
            .into_iter()
            .map(|(s, v)| {
                if v < 0.0 {
                    clamped.push(s.clone());
                    (s, 0.0)
                } else {
                    (s, v)
                }
            })
            .collect();
        Self {
            target_id: target_id.into(),
            rel,
            clamped,
        }
    }

    pub fn get(&self, source: &str) -> Option<f64> {
        self.rel.get(source).copied()
    }

    pub fn best(&self) -> Option<f64> {
        self.rel.values().copied().reduce(f64::max)
    }

    /// Same sources, every relevance multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(
            self.target_id.clone(),
            self.rel.iter().map(|(s, v)| (s.clone(), v * c)),
        )
    }
}

/// Score of `source → target` under `policy`.
///
/// Under `MeanOverSeeds` every transfer seed recorded for the target (across
/// all sources) must be present for this source; the mean runs in ascending
/// seed order.
pub fn mean_transfer(
    table: &TransferTable,
    source: &str,
    target: &str,
    policy: SeedPolicy,
) -> Result<f64, MetricError> {
    let missing = |seed| MetricError::MissingEntry {
        source_id: source.to_string(),
        target_id: target.to_string(),
        seed,
    };
    match policy {
        SeedPolicy::SingleSeed(seed) => table.score(source, target, seed).ok_or(missing(Some(seed))),
        SeedPolicy::MeanOverSeeds => {
            let seeds = table.target_seeds(target);
            let scores = seeds
                .iter()
                .map(|&seed| table.score(source, target, seed).ok_or(missing(Some(seed))))
                .collect::<Result<Vec<_>, _>>()?;
            mean(scores).ok_or(missing(None))
        }
    }
}

/// No-transfer baseline `M_t` under `policy`.
pub fn baseline_mean(table: &TransferTable, target: &str, policy: SeedPolicy) -> Result<f64, MetricError> {
    let missing = |seed| MetricError::MissingBaseline {
        target_id: target.to_string(),
        seed,
    };
    match policy {
        SeedPolicy::SingleSeed(seed) => table.baseline(target, seed).ok_or(missing(Some(seed))),
        SeedPolicy::MeanOverSeeds => mean(
            table
                .baseline_seeds(target)
                .into_iter()
                .filter_map(|seed| table.baseline(target, seed)),
        )
        .ok_or(missing(None)),
    }
}

/// Sources sorted by measured transfer performance, with their relevances.
pub fn ground_truth_ranking(
    table: &TransferTable,
    target: &str,
    sources: &[&str],
    policy: SeedPolicy,
) -> Result<(Ranking, RelevanceVector), MetricError> {
    let raw = sources
        .iter()
        .map(|&s| Ok((s.to_string(), mean_transfer(table, s, target, policy)?)))
        .collect::<Result<Vec<_>, MetricError>>()?;
    let ranking = Ranking::from_scores(target, "ground_truth", raw.clone())?;
    Ok((ranking, RelevanceVector::new(target, raw)))
}
