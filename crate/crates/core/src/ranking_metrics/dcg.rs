use std::collections::BTreeSet;

use super::{MetricError, Ranking, RelevanceVector};

/// Largest relevance accepted; `2^rel` stays finite in f64 up to here.
pub const MAX_RELEVANCE: f64 = 1023.0;

/// Discounted cumulative gain of the first `p` relevances:
/// `sum_{i=1..p} (2^rel_i − 1) / log2(i + 1)`.
pub fn dcg(rels_in_rank_order: &[f64], p: usize) -> Result<f64, MetricError> {
    if p == 0 || p > rels_in_rank_order.len() {
        return Err(MetricError::BadDepth {
            p,
            len: rels_in_rank_order.len(),
        });
    }
    let mut total = 0.0;
    for (i, &rel) in rels_in_rank_order[..p].iter().enumerate() {
        if rel < 0.0 {
            return Err(MetricError::NegativeRelevance(rel));
        }
        if rel > MAX_RELEVANCE || rel.is_nan() {
            return Err(MetricError::RelevanceOverflow(rel));
        }
        total += (rel.exp2() - 1.0) / ((i + 2) as f64).log2();
    }
    if !total.is_finite() {
        let worst = rels_in_rank_order[..p].iter().copied().fold(0.0, f64::max);
        return Err(MetricError::RelevanceOverflow(worst));
    }
    Ok(total)
}

fn relevances(r: &Ranking, rel: &RelevanceVector) -> Result<Vec<f64>, MetricError> {
    r.source_ids()
        .map(|s| {
            rel.get(s).ok_or_else(|| MetricError::SourceSetMismatch {
                target_id: rel.target_id.clone(),
            })
        })
        .collect()
}

/// `DCG(pred) / DCG(truth)` over the top `p` positions, in `[0, 1]`.
pub fn ndcg(
    pred: &Ranking,
    truth: &Ranking,
    rel: &RelevanceVector,
    p: usize,
) -> Result<f64, MetricError> {
    let pred_set: BTreeSet<&str> = pred.source_ids().collect();
    let truth_set: BTreeSet<&str> = truth.source_ids().collect();
    if pred_set != truth_set || pred_set.len() != pred.len() {
        return Err(MetricError::SourceSetMismatch {
            target_id: truth.target_id().to_string(),
        });
    }
    let ideal = dcg(&relevances(truth, rel)?, p)?;
    if ideal == 0.0 {
        return Err(MetricError::DegenerateIdeal {
            target_id: truth.target_id().to_string(),
        });
    }
    let got = dcg(&relevances(pred, rel)?, p)?;
    Ok((got / ideal).clamp(0.0, 1.0))
}
