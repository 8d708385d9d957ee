use serde::{Deserialize, Serialize};

use super::{baseline_mean, mean_transfer, relative_transfer, MetricError, Ranking, RelevanceVector, SeedPolicy};
use crate::tensor_io::TransferTable;

/// Regret@k in percent: the shortfall of the best source among the top `k`
/// predictions relative to the best source overall.
pub fn regret_at_k(pred: &Ranking, rel: &RelevanceVector, k: usize) -> Result<f64, MetricError> {
    if k == 0 || k > pred.len() {
        return Err(MetricError::BadK { k, len: pred.len() });
    }
    let values = pred
        .source_ids()
        .map(|s| {
            rel.get(s).ok_or_else(|| MetricError::SourceSetMismatch {
                target_id: rel.target_id.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return Err(MetricError::DegenerateRelevance {
            target_id: rel.target_id.clone(),
        });
    }
    let best_in_top_k = values[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(100.0 * (best - best_in_top_k) / best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferGain {
    pub abs_gain: f64,
    pub rel_gain_pct: f64,
    pub score: f64,
}

/// Best measured transfer among the top `k` predicted sources, against the
/// no-transfer baseline. `k` beyond the ranking length is capped; negative
/// gains are reported as-is.
pub fn best_of_top_k(
    pred: &Ranking,
    table: &TransferTable,
    target: &str,
    k: usize,
    policy: SeedPolicy,
) -> Result<TransferGain, MetricError> {
    if k == 0 || pred.is_empty() {
        return Err(MetricError::BadK { k, len: pred.len() });
    }
    let baseline = baseline_mean(table, target, policy)?;
    let mut score = f64::NEG_INFINITY;
    for source in pred.source_ids().take(k) {
        score = score.max(mean_transfer(table, source, target, policy)?);
    }
    Ok(TransferGain {
        abs_gain: score - baseline,
        rel_gain_pct: relative_transfer(score, baseline)?,
        score,
    })
}
