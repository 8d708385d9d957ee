use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ranking_metrics::SeedPolicy;

pub const DEFAULT_TRIALS: u64 = 10_000;
pub const DEFAULT_MASTER_SEED: u64 = 0xDCB0;

/// A task selection method.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Random,
    Size,
    /// Sentence embeddings from the named encoder.
    Semb(String),
    Feature,
    Unigram,
    Max,
}

impl Method {
    pub fn needs_prompts(&self) -> bool {
        matches!(self, Method::Feature | Method::Unigram | Method::Max)
    }

    /// Embedding-free methods report only their single top pick in the gains table.
    pub fn is_embedding_free(&self) -> bool {
        matches!(self, Method::Random | Method::Size)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Random => f.write_str("random"),
            Method::Size => f.write_str("size"),
            Method::Semb(enc) => write!(f, "semb:{enc}"),
            Method::Feature => f.write_str("feature"),
            Method::Unigram => f.write_str("unigram"),
            Method::Max => f.write_str("max"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "random" => Method::Random,
            "size" => Method::Size,
            "feature" => Method::Feature,
            "unigram" => Method::Unigram,
            "max" => Method::Max,
            _ => match s.strip_prefix("semb:") {
                Some(enc) if !enc.is_empty() => Method::Semb(enc.to_string()),
                _ => {
                    return Err(format!(
                        "unknown method {s:?} (expected random, size, semb:<encoder>, feature, unigram or max)"
                    ))
                }
            },
        })
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum LatestTag {
    #[serde(rename = "latest")]
    Latest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum AllTag {
    #[serde(rename = "all")]
    All,
}

/// Which prompt-tuning checkpoint feeds the prompt-based methods.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "StepRepr", into = "StepRepr")]
pub enum CheckpointStep {
    /// Largest step present for the task and seed.
    #[default]
    Latest,
    Step(u64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepRepr {
    Step(u64),
    Tag(LatestTag),
}

impl From<StepRepr> for CheckpointStep {
    fn from(r: StepRepr) -> Self {
        match r {
            StepRepr::Step(s) => CheckpointStep::Step(s),
            StepRepr::Tag(LatestTag::Latest) => CheckpointStep::Latest,
        }
    }
}

impl From<CheckpointStep> for StepRepr {
    fn from(s: CheckpointStep) -> Self {
        match s {
            CheckpointStep::Latest => StepRepr::Tag(LatestTag::Latest),
            CheckpointStep::Step(s) => StepRepr::Step(s),
        }
    }
}

impl FromStr for CheckpointStep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "latest" {
            return Ok(CheckpointStep::Latest);
        }
        s.parse()
            .map(CheckpointStep::Step)
            .map_err(|_| format!("step must be an integer or \"latest\", got {s:?}"))
    }
}

impl fmt::Display for CheckpointStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointStep::Latest => f.write_str("latest"),
            CheckpointStep::Step(s) => write!(f, "{s}"),
        }
    }
}

/// nDCG depth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "DepthRepr", into = "DepthRepr")]
pub enum Depth {
    /// Every candidate source.
    #[default]
    All,
    Top(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DepthRepr {
    Top(usize),
    Tag(AllTag),
}

impl From<DepthRepr> for Depth {
    fn from(r: DepthRepr) -> Self {
        match r {
            DepthRepr::Top(p) => Depth::Top(p),
            DepthRepr::Tag(AllTag::All) => Depth::All,
        }
    }
}

impl From<Depth> for DepthRepr {
    fn from(d: Depth) -> Self {
        match d {
            Depth::All => DepthRepr::Tag(AllTag::All),
            Depth::Top(p) => DepthRepr::Top(p),
        }
    }
}

impl FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Depth::All);
        }
        s.parse()
            .map(Depth::Top)
            .map_err(|_| format!("p must be an integer or \"all\", got {s:?}"))
    }
}

impl Depth {
    pub fn resolve(self, sources: usize) -> usize {
        match self {
            Depth::All => sources,
            Depth::Top(p) => p,
        }
    }
}

/// Which prompt-tuning seed's checkpoint represents a task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSeedPolicy {
    /// Smallest seed present for the task.
    #[default]
    Lowest,
    Single(u64),
}

fn default_k_values() -> Vec<usize> {
    vec![1, 3]
}

fn default_trials() -> u64 {
    DEFAULT_TRIALS
}

fn default_master_seed() -> u64 {
    DEFAULT_MASTER_SEED
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub transfer_table_path: PathBuf,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub checkpoint_step: CheckpointStep,
    #[serde(default)]
    pub prompt_seed_policy: PromptSeedPolicy,
    #[serde(default)]
    pub transfer_seed_policy: SeedPolicy,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub p: Depth,
    #[serde(default = "default_trials")]
    pub monte_carlo_trials: u64,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Score Max as the mean of both directions instead of max-over-source.
    #[serde(default)]
    pub max_symmetrize: bool,
}

impl RunConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, transfer_table_path: impl Into<PathBuf>) -> Self {
        Self {
            manifest_path: manifest_path.into(),
            transfer_table_path: transfer_table_path.into(),
            methods: vec![
                Method::Random,
                Method::Size,
                Method::Feature,
                Method::Unigram,
                Method::Max,
            ],
            checkpoint_step: CheckpointStep::Latest,
            prompt_seed_policy: PromptSeedPolicy::Lowest,
            transfer_seed_policy: SeedPolicy::MeanOverSeeds,
            k_values: default_k_values(),
            p: Depth::All,
            monte_carlo_trials: DEFAULT_TRIALS,
            master_seed: DEFAULT_MASTER_SEED,
            output_dir: default_output_dir(),
            max_symmetrize: false,
        }
    }

    /// Reads a JSON config. Relative paths inside it are taken relative to
    /// the config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest_path, &mut cfg.transfer_table_path, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Problems with the config itself, independent of any input files.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.methods.is_empty() {
            out.push("methods list is empty".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m) {
                out.push(format!("method {m} listed twice"));
            }
        }
        if self.k_values.is_empty() {
            out.push("k_values is empty".to_string());
        }
        if self.k_values.contains(&0) {
            out.push("k_values must all be >= 1".to_string());
        }
        if self.p == Depth::Top(0) {
            out.push("p must be >= 1".to_string());
        }
        if self.methods.contains(&Method::Random) && self.monte_carlo_trials == 0 {
            out.push("monte_carlo_trials must be >= 1".to_string());
        }
        out
    }

    /// k values sorted ascending without duplicates.
    pub fn sorted_k(&self) -> Vec<usize> {
        let mut k = self.k_values.clone();
        k.sort_unstable();
        k.dedup();
        k
    }
}
