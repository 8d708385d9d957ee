use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{CheckpointStep, Depth, Diagnostic, DiagnosticKind as K, Method, PipelineError, PromptSeedPolicy, RunConfig};
use crate::ranking_metrics::{baseline_mean, mean_transfer, MetricError};
use crate::tensor_io::{
    load_manifest, load_prompt_matrix, load_sentence_embedding, load_transfer_table, Manifest, PromptMatrix,
    SentenceEmbeddingVec, TaskRecord, TensorIoError, TransferTable,
};

/// The checkpoint chosen to represent a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRef {
    pub task_id: String,
    pub seed: u64,
    pub step: u64,
    pub path: PathBuf,
}

/// Validated inputs for one run.
#[derive(Debug)]
pub struct Workspace {
    pub config: RunConfig,
    pub manifest: Manifest,
    pub table: TransferTable,
    sources: Vec<TaskRecord>,
    targets: Vec<TaskRecord>,
    prompts: BTreeMap<String, (PromptRef, PromptMatrix)>,
    sembs: BTreeMap<(String, String), (PathBuf, SentenceEmbeddingVec)>,
}

fn io_diag(e: &TensorIoError) -> Diagnostic {
    let kind = match e {
        TensorIoError::MissingArtifact { .. } => K::MissingArtifact,
        TensorIoError::InvariantViolation(_) => K::InvariantViolation,
        _ => K::Schema,
    };
    Diagnostic::new(kind, e.to_string())
}

impl Workspace {
    /// Loads everything `config` refers to and checks it, reporting every
    /// problem found rather than the first.
    pub fn load(config: RunConfig) -> Result<Self, PipelineError> {
        let mut diags: Vec<Diagnostic> = config.problems().into_iter().map(|m| Diagnostic::new(K::Config, m)).collect();

        let manifest = load_manifest(&config.manifest_path).map_err(|e| io_diag(&e));
        let table = load_transfer_table(&config.transfer_table_path).map_err(|e| io_diag(&e));
        let (manifest, table) = match (manifest, table) {
            (Ok(m), Ok(t)) => (m, t),
            (m, t) => {
                diags.extend(m.err());
                diags.extend(t.err());
                return Err(PipelineError::Validation(diags));
            }
        };

        let sources: Vec<TaskRecord> = manifest.sources().into_iter().cloned().collect();
        let targets: Vec<TaskRecord> = manifest.targets().into_iter().cloned().collect();
        let mpath = manifest.path.display().to_string();
        let tpath = config.transfer_table_path.display().to_string();
        if sources.is_empty() {
            diags.push(Diagnostic::new(K::Schema, format!("{mpath}: no source tasks")));
        }
        if targets.is_empty() {
            diags.push(Diagnostic::new(K::Schema, format!("{mpath}: no target tasks")));
        }

        for id in table.task_ids() {
            if manifest.task(id).is_none() {
                diags.push(Diagnostic::new(
                    K::UnknownTask,
                    format!("{tpath}: task {id} is not in the manifest {mpath}"),
                ));
            }
        }

        let mut ws = Workspace {
            config,
            manifest,
            table,
            sources,
            targets,
            prompts: BTreeMap::new(),
            sembs: BTreeMap::new(),
        };
        ws.check_table(&mut diags, &tpath);
        ws.check_depths(&mut diags);
        if ws.config.methods.contains(&Method::Size) {
            for s in ws.sources.iter().filter(|s| s.train_size == 0) {
                diags.push(Diagnostic::new(
                    K::InvariantViolation,
                    format!("{mpath}: task {} has train_size 0, required by size", s.task_id),
                ));
            }
        }
        if ws.config.methods.iter().any(Method::needs_prompts) {
            ws.load_prompts(&mut diags);
        }
        let encoders: BTreeSet<String> = ws
            .config
            .methods
            .iter()
            .filter_map(|m| match m {
                Method::Semb(e) => Some(e.clone()),
                _ => None,
            })
            .collect();
        for enc in encoders {
            ws.load_sembs(&enc, &mut diags);
        }

        if diags.is_empty() {
            Ok(ws)
        } else {
            Err(PipelineError::Validation(diags))
        }
    }

    /// Sources in ascending id order.
    pub fn sources(&self) -> &[TaskRecord] {
        &self.sources
    }

    /// Targets in ascending id order.
    pub fn targets(&self) -> &[TaskRecord] {
        &self.targets
    }

    /// Candidate sources for `target`; a task never transfers to itself.
    pub fn candidates(&self, target: &str) -> Vec<&TaskRecord> {
        self.sources.iter().filter(|s| s.task_id != target).collect()
    }

    pub fn prompt(&self, task_id: &str) -> Option<(&PromptRef, &PromptMatrix)> {
        self.prompts.get(task_id).map(|(r, m)| (r, m))
    }

    pub fn prompt_refs(&self) -> impl Iterator<Item = &PromptRef> {
        self.prompts.values().map(|(r, _)| r)
    }

    pub fn semb(&self, task_id: &str, encoder: &str) -> Option<(&Path, &SentenceEmbeddingVec)> {
        self.sembs
            .get(&(task_id.to_string(), encoder.to_string()))
            .map(|(p, v)| (p.as_path(), v))
    }

    /// One-line success summary for `validate`.
    pub fn summary_line(&self) -> String {
        format!(
            "OK, {} sources, {} targets, {} methods",
            self.sources.len(),
            self.targets.len(),
            self.config.methods.len()
        )
    }

    fn check_table(&self, diags: &mut Vec<Diagnostic>, tpath: &str) {
        let policy = self.config.transfer_seed_policy;
        for t in &self.targets {
            for s in self.candidates(&t.task_id) {
                if let Err(e) = mean_transfer(&self.table, &s.task_id, &t.task_id, policy) {
                    diags.push(Diagnostic::new(K::MissingEntry, format!("{tpath}: {e}")));
                }
            }
            match baseline_mean(&self.table, &t.task_id, policy) {
                Err(e @ MetricError::MissingBaseline { .. }) => {
                    diags.push(Diagnostic::new(K::MissingBaseline, format!("{tpath}: {e}")))
                }
                Err(e) => diags.push(Diagnostic::new(K::Schema, format!("{tpath}: {e}"))),
                Ok(b) if b <= 0.0 => diags.push(Diagnostic::new(
                    K::InvariantViolation,
                    format!("{tpath}: no-transfer baseline {b} for target {} must be positive", t.task_id),
                )),
                Ok(_) => {}
            }
        }
    }

    fn check_depths(&self, diags: &mut Vec<Diagnostic>) {
        for t in &self.targets {
            let n = self.candidates(&t.task_id).len();
            if n == 0 {
                continue;
            }
            for &k in &self.config.k_values {
                if k > n {
                    diags.push(Diagnostic::new(
                        K::Config,
                        format!("k = {k} exceeds the {n} candidate sources of target {}", t.task_id),
                    ));
                }
            }
            if let Depth::Top(p) = self.config.p {
                if p > n {
                    diags.push(Diagnostic::new(
                        K::Config,
                        format!("p = {p} exceeds the {n} candidate sources of target {}", t.task_id),
                    ));
                }
            }
        }
    }

    /// Tasks whose prompts or sentence embeddings are needed, ascending id.
    fn involved_tasks(&self) -> Vec<&TaskRecord> {
        let mut v: Vec<&TaskRecord> = self.sources.iter().chain(&self.targets).collect();
        v.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        v.dedup_by(|a, b| a.task_id == b.task_id);
        v
    }

    fn resolve_prompt(&self, task_id: &str) -> Result<PromptRef, Diagnostic> {
        let mpath = self.manifest.path.display();
        let index = &self.manifest.index;
        let missing = |what: String| Diagnostic::new(K::MissingArtifact, format!("{mpath}: task {task_id}: {what}"));
        let seeds = index.prompt_seeds(task_id);
        let seed = match self.config.prompt_seed_policy {
            PromptSeedPolicy::Lowest => *seeds
                .first()
                .ok_or_else(|| missing("no prompt checkpoint listed".into()))?,
            PromptSeedPolicy::Single(s) if seeds.contains(&s) => s,
            PromptSeedPolicy::Single(s) => return Err(missing(format!("no prompt checkpoint for seed {s}"))),
        };
        let steps = index.steps(task_id, seed);
        let step = match self.config.checkpoint_step {
            CheckpointStep::Latest => *steps.last().ok_or_else(|| missing(format!("no steps for seed {seed}")))?,
            CheckpointStep::Step(k) if steps.contains(&k) => k,
            CheckpointStep::Step(k) => {
                return Err(missing(format!("no prompt checkpoint for seed {seed} at step {k}")))
            }
        };
        let path = index
            .prompt(task_id, seed, step)
            .ok_or_else(|| missing(format!("no prompt checkpoint for seed {seed} at step {step}")))?
            .to_path_buf();
        Ok(PromptRef {
            task_id: task_id.to_string(),
            seed,
            step,
            path,
        })
    }

    fn load_prompts(&mut self, diags: &mut Vec<Diagnostic>) {
        let refs: Vec<Result<PromptRef, Diagnostic>> = self
            .involved_tasks()
            .iter()
            .map(|t| self.resolve_prompt(&t.task_id))
            .collect();
        let loaded: Vec<Result<(PromptRef, PromptMatrix), Diagnostic>> = refs
            .into_par_iter()
            .map(|r| {
                let r = r?;
                let m = load_prompt_matrix(&r.path).map_err(|e| io_diag(&e))?;
                if m.task_id() != r.task_id {
                    return Err(Diagnostic::new(
                        K::InvariantViolation,
                        format!(
                            "{}: header names task {}, manifest lists it for task {}",
                            r.path.display(),
                            m.task_id(),
                            r.task_id
                        ),
                    ));
                }
                Ok((r, m))
            })
            .collect();
        for item in loaded {
            match item {
                Ok((r, m)) => {
                    self.prompts.insert(r.task_id.clone(), (r, m));
                }
                Err(d) => diags.push(d),
            }
        }

        let methods = &self.config.methods;
        let by_d: Vec<String> = methods
            .iter()
            .filter(|m| matches!(m, Method::Feature | Method::Max))
            .map(Method::to_string)
            .collect();
        if !by_d.is_empty() {
            self.check_dim(diags, "embedding dim d", |m| m.cols(), &by_d.join(" and "));
        }
        if methods.contains(&Method::Unigram) {
            self.check_dim(diags, "prompt length N", |m| m.rows(), "unigram");
        }
    }

    fn check_dim(&self, diags: &mut Vec<Diagnostic>, what: &str, dim: fn(&PromptMatrix) -> usize, method: &str) {
        let mut iter = self.prompts.values();
        let Some((r0, m0)) = iter.next() else { return };
        for (r, m) in iter {
            if dim(m) != dim(m0) {
                diags.push(Diagnostic::new(
                    K::DimensionMismatch,
                    format!(
                        "task {} ({}) has {what} = {}, task {} ({}) has {}; {method} needs them equal",
                        r.task_id,
                        r.path.display(),
                        dim(m),
                        r0.task_id,
                        r0.path.display(),
                        dim(m0)
                    ),
                ));
            }
        }
    }

    fn load_sembs(&mut self, encoder: &str, diags: &mut Vec<Diagnostic>) {
        let mpath = self.manifest.path.display().to_string();
        let wanted: Vec<(String, Option<PathBuf>)> = self
            .involved_tasks()
            .iter()
            .map(|t| {
                let p = self.manifest.index.semb(&t.task_id, encoder).map(Path::to_path_buf);
                (t.task_id.clone(), p)
            })
            .collect();
        let mut first: Option<(String, PathBuf, usize)> = None;
        for (task_id, path) in wanted {
            let Some(path) = path else {
                diags.push(Diagnostic::new(
                    K::MissingArtifact,
                    format!("{mpath}: task {task_id}: no sentence embedding for encoder {encoder}"),
                ));
                continue;
            };
            match load_sentence_embedding(&path, encoder) {
                Err(e) => diags.push(io_diag(&e)),
                Ok(v) => {
                    match &first {
                        None => first = Some((task_id.clone(), path.clone(), v.dim())),
                        Some((t0, p0, d0)) if *d0 != v.dim() => diags.push(Diagnostic::new(
                            K::DimensionMismatch,
                            format!(
                                "task {task_id} ({}) has semb:{encoder} dim {}, task {t0} ({}) has {d0}",
                                path.display(),
                                v.dim(),
                                p0.display()
                            ),
                        )),
                        Some(_) => {}
                    }
                    self.sembs.insert((task_id, encoder.to_string()), (path, v));
                }
            }
        }
    }
}
