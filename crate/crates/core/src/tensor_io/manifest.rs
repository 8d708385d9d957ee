use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TensorIoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    #[serde(alias = "Classification")]
    Classification,
    #[serde(alias = "MultipleChoice", alias = "M. Choice", alias = "mc")]
    MultipleChoice,
    #[serde(alias = "QA")]
    Qa,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Classification, Category::MultipleChoice, Category::Qa];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Classification => "Classification",
            Category::MultipleChoice => "MultipleChoice",
            Category::Qa => "QA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
    Both,
}

impl Role {
    pub fn is_source(self) -> bool {
        matches!(self, Role::Source | Role::Both)
    }

    pub fn is_target(self) -> bool {
        matches!(self, Role::Target | Role::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    #[serde(rename = "id")]
    pub task_id: String,
    #[serde(rename = "name")]
    pub display_name: String,
    pub category: Category,
    pub train_size: u64,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Prompt,
    Semb,
}

/// One `artifacts` entry as written in the manifest. `seed` and `step` are
/// required for prompts; `encoder` is required for sentence embeddings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub task_id: String,
    pub kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    pub path: String,
}

/// The manifest file as a serde document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub tasks: Vec<TaskRecord>,
    #[serde(default)]
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PromptKey {
    pub task_id: String,
    pub seed: u64,
    pub step: u64,
}

/// Resolved artifact paths, keyed for lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArtifactIndex {
    prompts: BTreeMap<PromptKey, PathBuf>,
    sembs: BTreeMap<(String, String), PathBuf>,
}

impl ArtifactIndex {
    pub fn prompt(&self, task_id: &str, seed: u64, step: u64) -> Option<&Path> {
        let key = PromptKey {
            task_id: task_id.to_string(),
            seed,
            step,
        };
        self.prompts.get(&key).map(PathBuf::as_path)
    }

    pub fn prompt_seeds(&self, task_id: &str) -> BTreeSet<u64> {
        self.prompts_for(task_id).map(|k| k.seed).collect()
    }

    pub fn steps(&self, task_id: &str, seed: u64) -> BTreeSet<u64> {
        self.prompts_for(task_id)
            .filter(|k| k.seed == seed)
            .map(|k| k.step)
            .collect()
    }

    fn prompts_for<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = &'a PromptKey> + 'a {
        self.prompts.keys().filter(move |k| k.task_id == task_id)
    }

    pub fn semb(&self, task_id: &str, encoder: &str) -> Option<&Path> {
        self.sembs
            .get(&(task_id.to_string(), encoder.to_string()))
            .map(PathBuf::as_path)
    }

    pub fn encoders(&self) -> BTreeSet<&str> {
        self.sembs.keys().map(|(_, e)| e.as_str()).collect()
    }

    pub fn prompt_count(&self) -> usize {
        self.prompts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub tasks: Vec<TaskRecord>,
    pub index: ArtifactIndex,
}

impl Manifest {
    pub fn task(&self, task_id: &str) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Source tasks in ascending id order.
    pub fn sources(&self) -> Vec<&TaskRecord> {
        self.sorted_by_role(Role::is_source)
    }

    /// Target tasks in ascending id order.
    pub fn targets(&self) -> Vec<&TaskRecord> {
        self.sorted_by_role(Role::is_target)
    }

    fn sorted_by_role(&self, keep: fn(Role) -> bool) -> Vec<&TaskRecord> {
        let mut v: Vec<_> = self.tasks.iter().filter(|t| keep(t.role)).collect();
        v.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        v
    }
}

/// Reads a manifest, resolving artifact paths relative to the manifest's
/// directory and checking that each one exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, TensorIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let schema = |reason: String| TensorIoError::Schema {
        path: path.to_path_buf(),
        line: None,
        reason,
    };
    let doc: ManifestDocument = serde_json::from_str(&text).map_err(|e| TensorIoError::Schema {
        path: path.to_path_buf(),
        line: Some(e.line() as u64),
        reason: e.to_string(),
    })?;

    let mut seen = BTreeSet::new();
    for t in &doc.tasks {
        if t.task_id.is_empty() {
            return Err(schema("empty task id".into()));
        }
        if !seen.insert(t.task_id.as_str()) {
            return Err(TensorIoError::DuplicateTaskId {
                path: path.to_path_buf(),
                task_id: t.task_id.clone(),
            });
        }
    }

    let root = path.parent().unwrap_or(Path::new("."));
    let mut index = ArtifactIndex::default();
    for a in &doc.artifacts {
        if !seen.contains(a.task_id.as_str()) {
            return Err(schema(format!("artifact references unknown task {:?}", a.task_id)));
        }
        let resolved = root.join(&a.path);
        if !resolved.is_file() {
            return Err(TensorIoError::MissingArtifact {
                manifest: path.to_path_buf(),
                task_id: a.task_id.clone(),
                artifact: resolved,
            });
        }
        let duplicate = match a.kind {
            ArtifactKind::Prompt => {
                let (Some(seed), Some(step)) = (a.seed, a.step) else {
                    return Err(schema(format!(
                        "prompt artifact for {:?} needs seed and step",
                        a.task_id
                    )));
                };
                let key = PromptKey {
                    task_id: a.task_id.clone(),
                    seed,
                    step,
                };
                index.prompts.insert(key, resolved).is_some()
            }
            ArtifactKind::Semb => {
                let Some(encoder) = &a.encoder else {
                    return Err(schema(format!(
                        "semb artifact for {:?} needs an encoder",
                        a.task_id
                    )));
                };
                index
                    .sembs
                    .insert((a.task_id.clone(), encoder.clone()), resolved)
                    .is_some()
            }
        };
        if duplicate {
            return Err(schema(format!("duplicate artifact entry for {:?}", a.task_id)));
        }
    }

    Ok(Manifest {
        path: path.to_path_buf(),
        tasks: doc.tasks,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write(dir: &Path, value: serde_json::Value) -> PathBuf {
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
        p
    }

    fn task(id: &str, role: &str) -> serde_json::Value {
        json!({"id": id, "name": id.to_uppercase(), "category": "classification", "train_size": 10, "role": role})
    }

    #[test]
    fn counts_sources_and_targets() {
        let dir = tempfile::tempdir().unwrap();
        let mut tasks: Vec<_> = (0..13).map(|i| task(&format!("s{i:02}"), "source")).collect();
        tasks.extend((0..10).map(|i| task(&format!("t{i:02}"), "target")));
        let m = load_manifest(write(dir.path(), json!({"tasks": tasks, "artifacts": []}))).unwrap();
        assert_eq!(m.tasks.len(), 23);
        assert_eq!(m.sources().len(), 13);
        assert_eq!(m.targets().len(), 10);
    }

    #[test]
    fn duplicate_task_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), json!({"tasks": [task("cb", "target"), task("cb", "source")]}));
        assert!(matches!(
            load_manifest(p),
            Err(TensorIoError::DuplicateTaskId { task_id, .. }) if task_id == "cb"
        ));
    }

    #[test]
    fn missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            json!({"tasks": [task("cb", "target")],
                   "artifacts": [{"task_id": "cb", "kind": "prompt", "seed": 42, "step": 1, "path": "nope.ptns"}]}),
        );
        let err = load_manifest(p).unwrap_err();
        assert!(matches!(err, TensorIoError::MissingArtifact { .. }));
        assert!(err.to_string().contains("nope.ptns"));
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.ptns"), b"").unwrap();
        for doc in [
            json!({"artifacts": []}),
            json!({"tasks": [{"id": "x"}]}),
            json!({"tasks": [task("cb", "target")],
                   "artifacts": [{"task_id": "cb", "kind": "prompt", "path": "a.ptns"}]}),
            json!({"tasks": [task("cb", "target")],
                   "artifacts": [{"task_id": "zz", "kind": "semb", "encoder": "e", "path": "a.ptns"}]}),
            json!({"tasks": [task("cb", "target")],
                   "artifacts": [{"task_id": "cb", "kind": "semb", "path": "a.ptns"}]}),
        ] {
            let p = write(dir.path(), doc.clone());
            assert!(
                matches!(load_manifest(p), Err(TensorIoError::Schema { .. })),
                "{doc}"
            );
        }
    }

    #[test]
    fn index_lookup() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.ptns", "b.ptns", "c.ptns"] {
            fs::write(dir.path().join(f), b"").unwrap();
        }
        let p = write(
            dir.path(),
            json!({"tasks": [task("cb", "target")],
                   "artifacts": [
                       {"task_id": "cb", "kind": "prompt", "seed": 42, "step": 5000, "path": "a.ptns"},
                       {"task_id": "cb", "kind": "prompt", "seed": 42, "step": 30000, "path": "b.ptns"},
                       {"task_id": "cb", "kind": "semb", "encoder": "sbert", "path": "c.ptns"}]}),
        );
        let m = load_manifest(p).unwrap();
        assert_eq!(m.index.steps("cb", 42).into_iter().collect::<Vec<_>>(), vec![5000, 30000]);
        assert!(m.index.prompt("cb", 42, 30000).unwrap().ends_with("b.ptns"));
        assert!(m.index.semb("cb", "sbert").is_some());
        assert_eq!(m.index.encoders().into_iter().collect::<Vec<_>>(), vec!["sbert"]);
    }

    #[test]
    fn category_aliases() {
        for (s, c) in [
            ("\"QA\"", Category::Qa),
            ("\"multiple_choice\"", Category::MultipleChoice),
            ("\"MultipleChoice\"", Category::MultipleChoice),
        ] {
            assert_eq!(serde_json::from_str::<Category>(s).unwrap(), c);
        }
    }
}
