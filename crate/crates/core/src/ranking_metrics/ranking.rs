use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub source_id: String,
    pub score: f64,
}

/// Source tasks for one target, best first.
///
/// Scores are non-increasing; equal scores are ordered by ascending
/// `source_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    target_id: String,
    method_id: String,
    items: Vec<RankedItem>,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl Ranking {
    pub fn from_scores(
        target_id: impl Into<String>,
        method_id: impl Into<String>,
        scores: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self, MetricError> {
        let target_id = target_id.into();
        let mut items: Vec<RankedItem> = scores
            .into_iter()
            .map(|(source_id, score)| RankedItem { source_id, score })
            .collect();
        let mut seen = BTreeSet::new();
        for it in &items {
            if !it.score.is_finite() {
                return Err(MetricError::InvalidRanking(format!(
                    "target {target_id}: non-finite score for {}",
                    it.source_id
                )));
            }
            if !seen.insert(it.source_id.as_str()) {
                return Err(MetricError::InvalidRanking(format!(
                    "target {target_id}: source {} listed twice",
                    it.source_id
                )));
            }
        }
        items.sort_by(|a, b| rank_order((&a.source_id, a.score), (&b.source_id, b.score)));
        Ok(Self {
            target_id,
            method_id: method_id.into(),
            items,
        })
    }

    /// A ranking that keeps the given order; scores count down from `len`.
    pub fn from_order(
        target_id: impl Into<String>,
        method_id: impl Into<String>,
        order: Vec<String>,
    ) -> Result<Self, MetricError> {
        let n = order.len();
        Self::from_scores(
            target_id,
            method_id,
            order.into_iter().enumerate().map(|(i, s)| (s, (n - i) as f64)),
        )
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn method_id(&self) -> &str {
        &self.method_id
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.items.iter().map(|it| it.source_id.as_str())
    }

    pub fn top(&self) -> Option<&str> {
        self.items.first().map(|it| it.source_id.as_str())
    }
}
