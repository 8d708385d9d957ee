//! Synthetic workspace with a planted source ordering for every target.
//!
//! Sources sit at the marks of a Golomb ruler, so all pairwise distances
//! differ. For each prompt token the generator builds an Ornstein-Uhlenbeck
//! chain of unit vectors along the ruler: with an orthonormal basis
//! `z_0..z_12` drawn per token,
//!
//! ```text
//! r_0 = z_0,   r_i = rho_i r_{i-1} + sqrt(1 - rho_i^2) z_i,   rho_i = exp(-(x_i - x_{i-1}) / L)
//! ```
//!
//! which gives `cos(r_i, r_j) = exp(-|x_i - x_j| / L)` exactly. Rows of
//! different tokens come from independent bases and stay near-orthogonal.
//! Each target copies the rows of one designated source, so the Max
//! similarity of source `i` to that target is `exp(-|x_i - x_d| / L)` and
//! the true ordering is by ruler distance. Measured transfer scores follow
//! the same kernel.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{CheckpointStep, Depth, Method, PipelineError, PromptSeedPolicy, RunConfig};
use crate::ranking_metrics::SeedPolicy;
use crate::rng::{self, TaskRng};
use crate::similarity::norm;
use crate::tensor_io::{
    save_prompt_matrix, save_sentence_embedding, ArtifactEntry, ArtifactKind, Category, ManifestDocument,
    PromptMatrix, Role, SentenceEmbeddingVec, TaskRecord, TransferTable,
};

pub const FIXTURE_ENCODER: &str = "fixture";
pub const FIXTURE_STEP: u64 = 30_000;
pub const FIXTURE_PROMPT_SEED: u64 = 42;
/// Transfer-run seeds recorded in the fixture table.
pub const FIXTURE_SEEDS: [u64; 3] = [112, 28, 52];

const SEED_JITTER: [f64; 3] = [0.25, -0.25, 0.0];
const RULER: [f64; 13] = [0.0, 2.0, 5.0, 25.0, 37.0, 43.0, 59.0, 70.0, 85.0, 89.0, 98.0, 99.0, 106.0];
const LENGTH_SCALE: f64 = 120.0;
const SEMB_DIM: usize = 64;

const SOURCES: [(&str, &str, Category, u64); 13] = [
    ("mnli", "MNLI", Category::Classification, 393_000),
    ("qqp", "QQP", Category::Classification, 364_000),
    ("qnli", "QNLI", Category::Classification, 105_000),
    ("record", "ReCoRD", Category::MultipleChoice, 101_000),
    ("cxc", "CxC", Category::Classification, 88_000),
    ("squad", "SQuAD", Category::Qa, 88_000),
    ("drop", "DROP", Category::Qa, 77_000),
    ("sst2", "SST-2", Category::Classification, 67_000),
    ("winogrande", "WinoGrande", Category::MultipleChoice, 40_000),
    ("hellaswag", "HellaSWAG", Category::MultipleChoice, 40_000),
    ("multirc", "MultiRC", Category::Classification, 27_000),
    ("cosmosqa", "CosmosQA", Category::MultipleChoice, 25_000),
    ("race", "RACE", Category::MultipleChoice, 25_000),
];

const TARGETS: [(&str, &str, Category, u64); 10] = [
    ("boolq", "BoolQ", Category::Qa, 9_000),
    ("cola", "CoLA", Category::Classification, 9_000),
    ("stsb", "STS-B", Category::Classification, 6_000),
    ("wic", "WiC", Category::Classification, 5_000),
    ("cr", "CR", Category::Classification, 4_000),
    ("mrpc", "MRPC", Category::Classification, 4_000),
    ("rte", "RTE", Category::Classification, 2_000),
    ("wsc", "WSC", Category::Classification, 554),
    ("copa", "COPA", Category::MultipleChoice, 400),
    ("cb", "CB", Category::Classification, 250),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub out: PathBuf,
    /// Per-row noise norm as a fraction of the row norm.
    pub noise: f64,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
}

impl FixtureOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            noise: 0.0,
            seed: 7,
            rows: 100,
            cols: 768,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSummary {
    pub config_path: PathBuf,
    pub manifest_path: PathBuf,
    pub table_path: PathBuf,
    /// Designated source per target.
    pub planted: BTreeMap<String, String>,
    /// Planted source ordering per target, best first.
    pub planted_order: BTreeMap<String, Vec<String>>,
}

fn kernel(a: f64, b: f64) -> f64 {
    (-(a - b).abs() / LENGTH_SCALE).exp()
}

/// Index of the source that target `j` copies.
fn designated(j: usize) -> usize {
    (5 * j) % SOURCES.len()
}

fn gaussian(rng: &mut TaskRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn orthonormal_basis(rng: &mut TaskRng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            axpy(&mut v, -d, b);
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn record((id, name, category, size): (&str, &str, Category, u64), role: Role) -> TaskRecord {
    TaskRecord {
        task_id: id.into(),
        display_name: name.into(),
        category,
        train_size: size,
        role,
    }
}

/// Writes prompts, sentence embeddings, a manifest, a transfer table and a
/// `config.json` under `opts.out`.
pub fn export_fixture(opts: &FixtureOptions) -> Result<FixtureSummary, PipelineError> {
    if opts.rows == 0 || opts.cols < 2 * SOURCES.len() {
        return Err(PipelineError::config(format!(
            "fixture needs rows >= 1 and cols >= {}, got {} x {}",
            2 * SOURCES.len(),
            opts.rows,
            opts.cols
        )));
    }
    if !(opts.noise.is_finite() && opts.noise >= 0.0) {
        return Err(PipelineError::config(format!("noise must be >= 0, got {}", opts.noise)));
    }
    let out = &opts.out;
    for sub in ["prompts", "semb"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
    }
    let mut rng = rng::seeded(opts.seed);
    let (n, d) = (opts.rows, opts.cols);

    let mut src_data = vec![Vec::with_capacity(n * d); SOURCES.len()];
    let mut tgt_data = vec![Vec::with_capacity(n * d); TARGETS.len()];
    for _ in 0..n {
        let z = orthonormal_basis(&mut rng, SOURCES.len(), d);
        let mut chain: Vec<Vec<f64>> = Vec::with_capacity(SOURCES.len());
        for i in 0..SOURCES.len() {
            if i == 0 {
                chain.push(z[0].clone());
                continue;
            }
            let rho = kernel(RULER[i], RULER[i - 1]);
            let mut r: Vec<f64> = chain[i - 1].iter().map(|v| rho * v).collect();
            axpy(&mut r, (1.0 - rho * rho).sqrt(), &z[i]);
            chain.push(r);
        }
        for (i, r) in chain.iter().enumerate() {
            let scale = rng.random_range(0.5..2.0);
            src_data[i].extend(r.iter().map(|v| scale * v));
        }
        for (j, data) in tgt_data.iter_mut().enumerate() {
            let scale: f64 = rng.random_range(0.5..2.0);
            let mut row: Vec<f64> = chain[designated(j)].iter().map(|v| scale * v).collect();
            if opts.noise > 0.0 {
                let e = gaussian(&mut rng, d);
                let en = norm(&e);
                axpy(&mut row, opts.noise * scale / en, &e);
            }
            data.extend(row);
        }
    }

    let mut tasks = Vec::new();
    let mut artifacts = Vec::new();
    let mut semb_src = Vec::new();
    let all = SOURCES
        .iter()
        .zip(src_data)
        .map(|(s, data)| (record(*s, Role::Source), data))
        .chain(TARGETS.iter().zip(tgt_data).map(|(t, data)| (record(*t, Role::Target), data)));
    for (i, (task, data)) in all.enumerate() {
        let rel_path = format!("prompts/{}.s{FIXTURE_PROMPT_SEED}.k{FIXTURE_STEP}.ptns", task.task_id);
        let m = PromptMatrix::new(task.task_id.clone(), FIXTURE_PROMPT_SEED, FIXTURE_STEP, n, d, data)
            .map_err(|e| write_err(&out.join(&rel_path), e))?;
        save_prompt_matrix(&m, out.join(&rel_path)).map_err(|e| write_err(&out.join(&rel_path), e))?;
        artifacts.push(ArtifactEntry {
            task_id: task.task_id.clone(),
            kind: ArtifactKind::Prompt,
            seed: Some(FIXTURE_PROMPT_SEED),
            step: Some(FIXTURE_STEP),
            encoder: None,
            path: rel_path,
        });

        // Sentence vectors: targets lean toward their designated source.
        let mut v = gaussian(&mut rng, SEMB_DIM);
        if i < SOURCES.len() {
            semb_src.push(v.clone());
        } else {
            let base = &semb_src[designated(i - SOURCES.len())];
            axpy(&mut v, 2.0, base);
        }
        let rel_path = format!("semb/{}.{FIXTURE_ENCODER}.ptns", task.task_id);
        let vec = SentenceEmbeddingVec::new(task.task_id.clone(), FIXTURE_ENCODER.to_string(), v)
            .map_err(|e| write_err(&out.join(&rel_path), e))?;
        save_sentence_embedding(&vec, out.join(&rel_path)).map_err(|e| write_err(&out.join(&rel_path), e))?;
        artifacts.push(ArtifactEntry {
            task_id: task.task_id.clone(),
            kind: ArtifactKind::Semb,
            seed: None,
            step: None,
            encoder: Some(FIXTURE_ENCODER.into()),
            path: rel_path,
        });
        tasks.push(task);
    }

    let manifest_path = out.join("manifest.json");
    let doc = ManifestDocument { tasks, artifacts };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| PipelineError::Internal(e.to_string()))? + "\n";
    fs::write(&manifest_path, text).map_err(|e| write_err(&manifest_path, e))?;

    let mut table = TransferTable::new();
    let mut planted = BTreeMap::new();
    let mut planted_order = BTreeMap::new();
    for (j, (tid, ..)) in TARGETS.iter().enumerate() {
        let x_d = RULER[designated(j)];
        for (seed, jitter) in FIXTURE_SEEDS.iter().zip(SEED_JITTER) {
            for (i, (sid, ..)) in SOURCES.iter().enumerate() {
                let score = round2(50.0 + 40.0 * kernel(RULER[i], x_d) + jitter);
                table.insert_entry(sid, tid, *seed, score);
            }
            table.insert_baseline(tid, *seed, round2(50.0 + 40.0 * kernel(0.0, 50.0) + jitter));
        }
        let mut order: Vec<usize> = (0..SOURCES.len()).collect();
        order.sort_by(|&a, &b| kernel(RULER[b], x_d).total_cmp(&kernel(RULER[a], x_d)));
        planted.insert(tid.to_string(), SOURCES[designated(j)].0.to_string());
        planted_order.insert(tid.to_string(), order.iter().map(|&i| SOURCES[i].0.to_string()).collect());
    }
    let table_path = out.join("transfer.csv");
    table.write_csv(&table_path).map_err(|e| write_err(&table_path, e))?;

    let config = RunConfig {
        manifest_path: "manifest.json".into(),
        transfer_table_path: "transfer.csv".into(),
        methods: vec![
            Method::Random,
            Method::Size,
            Method::Semb(FIXTURE_ENCODER.into()),
            Method::Feature,
            Method::Unigram,
            Method::Max,
        ],
        checkpoint_step: CheckpointStep::Latest,
        prompt_seed_policy: PromptSeedPolicy::Lowest,
        transfer_seed_policy: SeedPolicy::MeanOverSeeds,
        k_values: vec![1, 3],
        p: Depth::All,
        monte_carlo_trials: super::DEFAULT_TRIALS,
        master_seed: super::DEFAULT_MASTER_SEED,
        output_dir: "out".into(),
        max_symmetrize: false,
    };
    let config_path = out.join("config.json");
    let text = serde_json::to_string_pretty(&config).map_err(|e| PipelineError::Internal(e.to_string()))? + "\n";
    fs::write(&config_path, text).map_err(|e| write_err(&config_path, e))?;

    Ok(FixtureSummary {
        config_path,
        manifest_path,
        table_path,
        planted,
        planted_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ruler_distances_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for (i, a) in RULER.iter().enumerate() {
            for b in &RULER[i + 1..] {
                assert!(seen.insert((b - a) as u64));
            }
        }
    }

    #[test]
    fn designated_sources_are_distinct() {
        let set: std::collections::BTreeSet<usize> = (0..TARGETS.len()).map(designated).collect();
        assert_eq!(set.len(), TARGETS.len());
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = orthonormal_basis(&mut rng::seeded(3), 13, 40);
        for i in 0..13 {
            for j in 0..13 {
                let d: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }
}
