use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{mean, MetricError, TransferGain};
use crate::tensor_io::{Category, TaskRecord};

/// Group label used for the mean over every target.
pub const ALL_CATEGORIES: &str = "All";

/// Evaluation of one method on one target. For the Random method these are
/// already Monte Carlo means.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub target_id: String,
    pub method_id: String,
    pub ndcg: f64,
    pub regret_at_k: BTreeMap<usize, f64>,
    /// Best-of-top-k gains, keyed by k. May be empty for methods that are
    /// not reported in the gains table.
    pub gains: BTreeMap<usize, TransferGain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target_id: String,
    pub method_id: String,
    pub category: Category,
    pub ndcg: f64,
    pub regret_at_k: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub method_id: String,
    pub targets: usize,
    pub ndcg: f64,
    pub regret_at_k: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub method_id: String,
    pub k: usize,
    pub abs_gain: f64,
    pub rel_gain_pct: f64,
    pub avg_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSettings {
    pub trials: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub p: usize,
    pub k_values: Vec<usize>,
    pub methods: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSettings>,
    pub per_target: Vec<TargetMetrics>,
    pub per_category: Vec<GroupMetrics>,
    pub overall: Vec<GroupMetrics>,
    pub transfer_gains: Vec<GainRow>,
    pub no_transfer_avg_score: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn group(&self, group: &str, method: &str) -> Option<&GroupMetrics> {
        self.per_category
            .iter()
            .chain(&self.overall)
            .find(|g| g.group == group && g.method_id == method)
    }

    pub fn target(&self, target: &str, method: &str) -> Option<&TargetMetrics> {
        self.per_target
            .iter()
            .find(|t| t.target_id == target && t.method_id == method)
    }
}

/// Inputs to [`aggregate_report`] that are not per-target results.
pub struct AggregateContext<'a> {
    pub targets: &'a [&'a TaskRecord],
    pub methods: &'a [String],
    pub k_values: &'a [usize],
    pub p: usize,
    /// Mean no-transfer score per target.
    pub baselines: &'a BTreeMap<String, f64>,
    pub random: Option<RandomSettings>,
    pub warnings: Vec<String>,
}

fn group_of(
    label: &str,
    method: &str,
    members: &[&TargetResult],
    k_values: &[usize],
) -> GroupMetrics {
    GroupMetrics {
        group: label.to_string(),
        method_id: method.to_string(),
        targets: members.len(),
        ndcg: mean(members.iter().map(|r| r.ndcg)).unwrap_or(f64::NAN),
        regret_at_k: k_values
            .iter()
            .map(|&k| (k, mean(members.iter().map(|r| r.regret_at_k[&k])).unwrap_or(f64::NAN)))
            .collect(),
    }
}

/// Unweighted means per (category, method) and per method over all targets,
/// plus averaged best-of-top-k gains.
pub fn aggregate_report(
    mut results: Vec<TargetResult>,
    ctx: AggregateContext<'_>,
) -> Result<EvalReport, MetricError> {
    results.sort_by(|a, b| (&a.target_id, &a.method_id).cmp(&(&b.target_id, &b.method_id)));
    let mut targets: Vec<&TaskRecord> = ctx.targets.to_vec();
    targets.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let lookup: BTreeMap<(&str, &str), &TargetResult> = results
        .iter()
        .map(|r| ((r.target_id.as_str(), r.method_id.as_str()), r))
        .collect();
    let mut missing = Vec::new();
    for t in &targets {
        for m in ctx.methods {
            match lookup.get(&(t.task_id.as_str(), m.as_str())) {
                None => missing.push(format!("({}, {m})", t.task_id)),
                Some(r) => {
                    for k in ctx.k_values {
                        if !r.regret_at_k.contains_key(k) {
                            missing.push(format!("({}, {m}, regret@{k})", t.task_id));
                        }
                    }
                }
            }
        }
        if !ctx.baselines.contains_key(&t.task_id) {
            missing.push(format!("({}, no-transfer baseline)", t.task_id));
        }
    }
    if !missing.is_empty() {
        return Err(MetricError::IncompleteResults { missing });
    }

    let mut per_target = Vec::new();
    for t in &targets {
        for m in ctx.methods {
            let r = lookup[&(t.task_id.as_str(), m.as_str())];
            per_target.push(TargetMetrics {
                target_id: t.task_id.clone(),
                method_id: m.clone(),
                category: t.category,
                ndcg: r.ndcg,
                regret_at_k: r.regret_at_k.clone(),
            });
        }
    }

    let mut per_category = Vec::new();
    let mut overall = Vec::new();
    let mut transfer_gains = Vec::new();
    for m in ctx.methods {
        let of_method: Vec<&TargetResult> = targets
            .iter()
            .map(|t| lookup[&(t.task_id.as_str(), m.as_str())])
            .collect();
        for cat in Category::ALL {
            let members: Vec<&TargetResult> = targets
                .iter()
                .zip(&of_method)
                .filter(|(t, _)| t.category == cat)
                .map(|(_, r)| *r)
                .collect();
            if !members.is_empty() {
                per_category.push(group_of(&cat.to_string(), m, &members, ctx.k_values));
            }
        }
        overall.push(group_of(ALL_CATEGORIES, m, &of_method, ctx.k_values));

        let gain_ks: Vec<usize> = of_method
            .first()
            .map(|r| r.gains.keys().copied().collect())
            .unwrap_or_default();
        for k in gain_ks {
            let cells = of_method
                .iter()
                .map(|r| {
                    r.gains.get(&k).copied().ok_or_else(|| MetricError::IncompleteResults {
                        missing: vec![format!("({}, {m}, gain@{k})", r.target_id)],
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            transfer_gains.push(GainRow {
                method_id: m.clone(),
                k,
                abs_gain: mean(cells.iter().map(|g| g.abs_gain)).unwrap_or(f64::NAN),
                rel_gain_pct: mean(cells.iter().map(|g| g.rel_gain_pct)).unwrap_or(f64::NAN),
                avg_score: mean(cells.iter().map(|g| g.score)).unwrap_or(f64::NAN),
            });
        }
    }

    Ok(EvalReport {
        p: ctx.p,
        k_values: ctx.k_values.to_vec(),
        methods: ctx.methods.to_vec(),
        random: ctx.random,
        per_target,
        per_category,
        overall,
        transfer_gains,
        no_transfer_avg_score: mean(targets.iter().map(|t| ctx.baselines[&t.task_id])).unwrap_or(f64::NAN),
        warnings: ctx.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::Role;

    fn target(id: &str, category: Category) -> TaskRecord {
        TaskRecord {
            task_id: id.into(),
            display_name: id.into(),
            category,
            train_size: 100,
            role: Role::Target,
        }
    }

    fn result(target: &str, method: &str, ndcg: f64, r1: f64) -> TargetResult {
        TargetResult {
            target_id: target.into(),
            method_id: method.into(),
            ndcg,
            regret_at_k: BTreeMap::from([(1, r1)]),
            gains: BTreeMap::from([(
                1,
                TransferGain {
                    abs_gain: r1,
                    rel_gain_pct: 2.0 * r1,
                    score: 70.0 + r1,
                },
            )]),
        }
    }

    fn run(results: Vec<TargetResult>, targets: &[&TaskRecord]) -> Result<EvalReport, MetricError> {
        let methods = vec!["feature".to_string()];
        let baselines: BTreeMap<String, f64> =
            targets.iter().map(|t| (t.task_id.clone(), 70.0)).collect();
        aggregate_report(
            results,
            AggregateContext {
                targets,
                methods: &methods,
                k_values: &[1],
                p: 3,
                baselines: &baselines,
                random: None,
                warnings: vec![],
            },
        )
    }

    #[test]
    fn category_means() {
        let (a, b, c) = (
            target("a", Category::Classification),
            target("b", Category::Classification),
            target("c", Category::Qa),
        );
        let report = run(
            vec![
                result("b", "feature", 0.9, 1.0),
                result("a", "feature", 0.8, 3.0),
                result("c", "feature", 0.5, 0.0),
            ],
            &[&a, &b, &c],
        )
        .unwrap();
        let cls = report.group("Classification", "feature").unwrap();
        assert!((cls.ndcg - 0.85).abs() < 1e-12);
        assert_eq!(cls.regret_at_k[&1], 2.0);
        assert_eq!(cls.targets, 2);
        assert_eq!(report.group("QA", "feature").unwrap().ndcg, 0.5);
        assert!(report.group("MultipleChoice", "feature").is_none());
        let all = report.group(ALL_CATEGORIES, "feature").unwrap();
        assert!((all.ndcg - (0.8 + 0.9 + 0.5) / 3.0).abs() < 1e-12);
        assert_eq!(report.transfer_gains.len(), 1);
        assert!((report.transfer_gains[0].avg_score - (70.0 + 4.0 / 3.0)).abs() < 1e-12);
        assert_eq!(report.no_transfer_avg_score, 70.0);
        assert_eq!(report.per_target[0].target_id, "a");
    }

    #[test]
    fn incomplete_results_list_cells() {
        let (a, b) = (target("a", Category::Qa), target("b", Category::Qa));
        match run(vec![result("a", "feature", 0.8, 0.0)], &[&a, &b]) {
            Err(MetricError::IncompleteResults { missing }) => {
                assert_eq!(missing, vec!["(b, feature)".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_roundtrip() {
        let a = target("a", Category::MultipleChoice);
        let report = run(vec![result("a", "feature", 0.8, 1.5)], &[&a]).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }
}
