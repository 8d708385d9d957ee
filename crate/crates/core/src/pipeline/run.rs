use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;

use super::{Method, PipelineError, Workspace};
use crate::ranking_metrics::{
    aggregate_report, baseline_mean, best_of_top_k, ground_truth_ranking, mean_transfer, ndcg, regret_at_k,
    relative_transfer, AggregateContext, EvalReport, MetricError, RandomSettings, Ranking, TargetResult,
    TransferGain,
};
use crate::rng;
use crate::similarity::{
    feature_similarity, max_similarity_normalized, random_ranking, semb_similarity, size_score, unigram_similarity, MaxOptions, NormalizedRows,
    SimilarityError,
};
use crate::tensor_io::TaskRecord;

fn data_err(context: String, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{context}: {e}"))
}

struct Prepared<'a> {
    ws: &'a Workspace,
    normalized: BTreeMap<String, NormalizedRows>,
}

impl Prepared<'_> {
    fn prompt_context(&self, task: &str) -> String {
        match self.ws.prompt(task) {
            Some((r, _)) => format!("task {task} ({})", r.path.display()),
            None => format!("task {task}"),
        }
    }

    fn pair_context(&self, source: &str, target: &str, method: &Method) -> String {
        format!(
            "{method}: source {}, target {}",
            self.prompt_context(source),
            self.prompt_context(target)
        )
    }

    fn sim_err(&self, source: &str, target: &str, method: &Method, e: SimilarityError) -> PipelineError {
        data_err(self.pair_context(source, target, method), e)
    }

    fn rank_one(&self, target_index: usize, target: &TaskRecord, method: &Method) -> Result<Ranking, PipelineError> {
        let ws = self.ws;
        let t = target.task_id.as_str();
        let candidates = ws.candidates(t);
        let context = || format!("{method}: target {t}");
        if let Method::Random = method {
            let owned: Vec<TaskRecord> = candidates.into_iter().cloned().collect();
            let seed = random_stream(ws, target_index).next_u64();
            return random_ranking(&owned, t, seed).map_err(|e| data_err(context(), e));
        }
        let mut scores = Vec::with_capacity(candidates.len());
        for s in candidates {
            let sid = s.task_id.as_str();
            let value = match method {
                Method::Random => unreachable!(),
                Method::Size => size_score(s).map_err(|e| data_err(context(), e))?,
                Method::Semb(enc) => {
                    let (_, a) = ws.semb(sid, enc).ok_or_else(|| missing_input(sid, method))?;
                    let (_, b) = ws.semb(t, enc).ok_or_else(|| missing_input(t, method))?;
                    semb_similarity(a, b).map_err(|e| self.sim_err(sid, t, method, e))?.value
                }
                Method::Feature | Method::Unigram => {
                    let (_, a) = ws.prompt(sid).ok_or_else(|| missing_input(sid, method))?;
                    let (_, b) = ws.prompt(t).ok_or_else(|| missing_input(t, method))?;
                    let f = if *method == Method::Feature {
                        feature_similarity
                    } else {
                        unigram_similarity
                    };
                    f(a, b).map_err(|e| self.sim_err(sid, t, method, e))?.value
                }
                Method::Max => {
                    let a = self.normalized.get(sid).ok_or_else(|| missing_input(sid, method))?;
                    let b = self.normalized.get(t).ok_or_else(|| missing_input(t, method))?;
                    let options = MaxOptions {
                        symmetrize: ws.config.max_symmetrize,
                    };
                    max_similarity_normalized(a, b, options).map_err(|e| self.sim_err(sid, t, method, e))?
                }
            };
            scores.push((s.task_id.clone(), value));
        }
        Ranking::from_scores(t, method.to_string(), scores).map_err(|e| data_err(context(), e))
    }
}

fn missing_input(task: &str, method: &Method) -> PipelineError {
    PipelineError::Internal(format!("{method}: inputs for task {task} were not loaded"))
}

/// The Random method's stream for the target at `target_index`. The first
/// draw seeds the reported ranking; later draws seed Monte Carlo trials, so
/// trial 0 is the reported ranking.
fn random_stream(ws: &Workspace, target_index: usize) -> rng::TaskRng {
    rng::stream(ws.config.master_seed, target_index as u64)
}

fn prepare(ws: &Workspace) -> Result<Prepared<'_>, PipelineError> {
    let mut normalized = BTreeMap::new();
    if ws.config.methods.contains(&Method::Max) {
        let refs: Vec<_> = ws.prompt_refs().collect();
        let rows = refs
            .par_iter()
            .map(|r| {
                let (_, m) = ws.prompt(&r.task_id).expect("listed prompt");
                NormalizedRows::new(m)
                    .map(|n| (r.task_id.clone(), n))
                    .map_err(|e| data_err(format!("max: task {} ({})", r.task_id, r.path.display()), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        normalized.extend(rows);
    }
    Ok(Prepared { ws, normalized })
}

/// One ranking per (target, method), sorted by target id then method id.
pub fn compute_rankings(ws: &Workspace) -> Result<Vec<Ranking>, PipelineError> {
    let prepared = prepare(ws)?;
    let jobs: Vec<(usize, &TaskRecord, &Method)> = ws
        .targets()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| ws.config.methods.iter().map(move |m| (i, t, m)))
        .collect();
    let mut rankings = jobs
        .par_iter()
        .map(|&(i, t, m)| prepared.rank_one(i, t, m))
        .collect::<Result<Vec<_>, _>>()?;
    rankings.sort_by(|a, b| (a.target_id(), a.method_id()).cmp(&(b.target_id(), b.method_id())));
    Ok(rankings)
}

struct TargetTruth {
    truth: Ranking,
    rel: crate::ranking_metrics::RelevanceVector,
    p: usize,
    /// Top-1 gain for each candidate source.
    single_gain: BTreeMap<String, TransferGain>,
}

fn target_truth(ws: &Workspace, target: &TaskRecord) -> Result<TargetTruth, PipelineError> {
    let t = target.task_id.as_str();
    let cfg = &ws.config;
    let tpath = cfg.transfer_table_path.display();
    let ctx = || format!("{tpath}: target {t}");
    let ids: Vec<&str> = ws.candidates(t).iter().map(|s| s.task_id.as_str()).collect();
    let (truth, rel) =
        ground_truth_ranking(&ws.table, t, &ids, cfg.transfer_seed_policy).map_err(|e| data_err(ctx(), e))?;
    let baseline = baseline_mean(&ws.table, t, cfg.transfer_seed_policy).map_err(|e| data_err(ctx(), e))?;
    let mut single_gain = BTreeMap::new();
    for &s in &ids {
        let score = mean_transfer(&ws.table, s, t, cfg.transfer_seed_policy).map_err(|e| data_err(ctx(), e))?;
        let rel_gain_pct = relative_transfer(score, baseline).map_err(|e| data_err(ctx(), e))?;
        single_gain.insert(
            s.to_string(),
            TransferGain {
                abs_gain: score - baseline,
                rel_gain_pct,
                score,
            },
        );
    }
    Ok(TargetTruth {
        truth,
        rel,
        p: cfg.p.resolve(ids.len()),
        single_gain,
    })
}

fn evaluate_fixed(
    ws: &Workspace,
    tt: &TargetTruth,
    pred: &Ranking,
    method: &Method,
    ks: &[usize],
) -> Result<TargetResult, MetricError> {
    let t = pred.target_id();
    let policy = ws.config.transfer_seed_policy;
    let mut regret = BTreeMap::new();
    for &k in ks {
        regret.insert(k, regret_at_k(pred, &tt.rel, k)?);
    }
    let mut gains = BTreeMap::new();
    let gain_ks: &[usize] = if method.is_embedding_free() { &[1] } else { ks };
    for &k in gain_ks {
        gains.insert(k, best_of_top_k(pred, &ws.table, t, k, policy)?);
    }
    Ok(TargetResult {
        target_id: t.to_string(),
        method_id: pred.method_id().to_string(),
        ndcg: ndcg(pred, &tt.truth, &tt.rel, tt.p)?,
        regret_at_k: regret,
        gains,
    })
}

/// Monte Carlo means over `trials` uniformly random rankings.
fn evaluate_random(
    ws: &Workspace,
    tt: &TargetTruth,
    target_index: usize,
    ks: &[usize],
) -> Result<TargetResult, PipelineError> {
    let target = tt.truth.target_id();
    let owned: Vec<TaskRecord> = ws.candidates(target).into_iter().cloned().collect();
    let trials = ws.config.monte_carlo_trials;
    let mut stream = random_stream(ws, target_index);
    let ctx = || format!("random: target {target}");
    let mut ndcg_sum = 0.0;
    let mut regret_sum = vec![0.0; ks.len()];
    let mut gain_sum = [0.0; 3];
    for _ in 0..trials {
        let pred = random_ranking(&owned, target, stream.next_u64()).map_err(|e| data_err(ctx(), e))?;
        ndcg_sum += ndcg(&pred, &tt.truth, &tt.rel, tt.p).map_err(|e| data_err(ctx(), e))?;
        for (acc, &k) in regret_sum.iter_mut().zip(ks) {
            *acc += regret_at_k(&pred, &tt.rel, k).map_err(|e| data_err(ctx(), e))?;
        }
        let g = &tt.single_gain[pred.top().expect("nonempty ranking")];
        gain_sum[0] += g.abs_gain;
        gain_sum[1] += g.rel_gain_pct;
        gain_sum[2] += g.score;
    }
    let n = trials as f64;
    Ok(TargetResult {
        target_id: target.to_string(),
        method_id: Method::Random.to_string(),
        ndcg: ndcg_sum / n,
        regret_at_k: ks.iter().zip(&regret_sum).map(|(&k, &s)| (k, s / n)).collect(),
        gains: BTreeMap::from([(
            1,
            TransferGain {
                abs_gain: gain_sum[0] / n,
                rel_gain_pct: gain_sum[1] / n,
                score: gain_sum[2] / n,
            },
        )]),
    })
}

/// Scores `rankings` against the ground truth and aggregates them.
pub fn evaluate(ws: &Workspace, rankings: &[Ranking]) -> Result<EvalReport, PipelineError> {
    let cfg = &ws.config;
    let ks = cfg.sorted_k();
    let targets = ws.targets();
    let truths = targets
        .par_iter()
        .map(|t| target_truth(ws, t))
        .collect::<Result<Vec<_>, _>>()?;

    let mut warnings = Vec::new();
    for (t, tt) in targets.iter().zip(&truths) {
        for s in &tt.rel.clamped {
            let msg = format!("target {}: negative relevance for source {s} clamped to 0", t.task_id);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let index_of: BTreeMap<&str, usize> = targets.iter().enumerate().map(|(i, t)| (t.task_id.as_str(), i)).collect();
    let results = rankings
        .par_iter()
        .map(|pred| {
            let t = pred.target_id();
            let i = *index_of
                .get(t)
                .ok_or_else(|| PipelineError::Data(format!("ranking for unknown target {t}")))?;
            let method: Method = pred
                .method_id()
                .parse()
                .map_err(|e| PipelineError::Data(format!("target {t}: {e}")))?;
            if method == Method::Random {
                evaluate_random(ws, &truths[i], i, &ks)
            } else {
                evaluate_fixed(ws, &truths[i], pred, &method, &ks)
                    .map_err(|e| data_err(format!("{method}: target {t}"), e))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let baselines: BTreeMap<String, f64> = targets
        .iter()
        .map(|t| {
            baseline_mean(&ws.table, &t.task_id, cfg.transfer_seed_policy)
                .map(|b| (t.task_id.clone(), b))
                .map_err(|e| data_err(format!("{}: target {}", cfg.transfer_table_path.display(), t.task_id), e))
        })
        .collect::<Result<_, _>>()?;
    let methods: Vec<String> = cfg.methods.iter().map(Method::to_string).collect();
    let target_refs: Vec<&TaskRecord> = targets.iter().collect();
    let p = truths.iter().map(|tt| tt.p).max().unwrap_or(0);
    aggregate_report(
        results,
        AggregateContext {
            targets: &target_refs,
            methods: &methods,
            k_values: &ks,
            p,
            baselines: &baselines,
            random: cfg.methods.contains(&Method::Random).then_some(RandomSettings {
                trials: cfg.monte_carlo_trials,
                master_seed: cfg.master_seed,
            }),
            warnings,
        },
    )
    .map_err(|e| data_err("aggregation".into(), e))
}
