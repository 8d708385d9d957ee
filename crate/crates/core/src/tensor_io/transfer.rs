use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::TensorIoError;

/// Source id marking a no-transfer baseline row.
pub const NO_TRANSFER_SOURCE: &str = "__none__";

const HEADER: [&str; 4] = ["source", "target", "seed", "score"];

/// Measured transfer scores `(source, target, seed) -> score` plus the
/// no-transfer baselines `(target, seed) -> score`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferTable {
    entries: BTreeMap<(String, String, u64), f64>,
    baselines: BTreeMap<(String, u64), f64>,
}

impl TransferTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous score if the cell was already filled.
    pub fn insert_entry(&mut self, source: &str, target: &str, seed: u64, score: f64) -> Option<f64> {
        self.entries
            .insert((source.to_string(), target.to_string(), seed), score)
    }

    pub fn insert_baseline(&mut self, target: &str, seed: u64, score: f64) -> Option<f64> {
        self.baselines.insert((target.to_string(), seed), score)
    }

    pub fn score(&self, source: &str, target: &str, seed: u64) -> Option<f64> {
        self.entries
            .get(&(source.to_string(), target.to_string(), seed))
            .copied()
    }

    pub fn baseline(&self, target: &str, seed: u64) -> Option<f64> {
        self.baselines.get(&(target.to_string(), seed)).copied()
    }

    /// Seeds recorded for one `(source, target)` pair, ascending.
    pub fn seeds(&self, source: &str, target: &str) -> BTreeSet<u64> {
        self.entries
            .keys()
            .filter(|(s, t, _)| s == source && t == target)
            .map(|(_, _, seed)| *seed)
            .collect()
    }

    /// Every transfer seed seen for `target` across all sources, ascending.
    pub fn target_seeds(&self, target: &str) -> BTreeSet<u64> {
        self.entries
            .keys()
            .filter(|(_, t, _)| t == target)
            .map(|(_, _, seed)| *seed)
            .collect()
    }

    pub fn baseline_seeds(&self, target: &str) -> BTreeSet<u64> {
        self.baselines
            .keys()
            .filter(|(t, _)| t == target)
            .map(|(_, seed)| *seed)
            .collect()
    }

    /// Every task id mentioned anywhere in the table.
    pub fn task_ids(&self) -> BTreeSet<&str> {
        let mut ids = BTreeSet::new();
        for (s, t, _) in self.entries.keys() {
            ids.insert(s.as_str());
            ids.insert(t.as_str());
        }
        for (t, _) in self.baselines.keys() {
            ids.insert(t.as_str());
        }
        ids
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.baselines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len() + self.baselines.len()
    }

    /// Writes the table as CSV: baselines first, then entries, each in key order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
        let path = path.as_ref();
        let io = |e: csv::Error| TensorIoError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(HEADER).map_err(io)?;
        for ((target, seed), score) in &self.baselines {
            w.write_record([NO_TRANSFER_SOURCE, target, &seed.to_string(), &score.to_string()])
                .map_err(io)?;
        }
        for ((source, target, seed), score) in &self.entries {
            w.write_record([source, target, &seed.to_string(), &score.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|source| TensorIoError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_transfer_table(path: impl AsRef<Path>) -> Result<TransferTable, TensorIoError> {
    let path = path.as_ref();
    let schema = |line: Option<u64>, reason: String| TensorIoError::Schema {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => TensorIoError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => schema(None, format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| schema(Some(1), e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(schema(Some(1), "empty file, expected header source,target,seed,score".into()));
    }
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(schema(
            Some(1),
            format!("header {:?}, expected source,target,seed,score", header.iter().collect::<Vec<_>>()),
        ));
    }

    let mut table = TransferTable::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            schema(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let (source, target, seed, score) = (&record[0], &record[1], &record[2], &record[3]);
        if source.is_empty() || target.is_empty() {
            return Err(schema(Some(line), "empty task id".into()));
        }
        let seed: u64 = seed
            .parse()
            .map_err(|_| schema(Some(line), format!("seed {seed:?} is not a nonnegative integer")))?;
        let value: f64 = score
            .parse()
            .map_err(|_| schema(Some(line), format!("score {score:?} is not a number")))?;
        if !value.is_finite() {
            return Err(TensorIoError::NonFiniteScore {
                path: path.to_path_buf(),
                line,
                value: score.to_string(),
            });
        }
        let previous = if source == NO_TRANSFER_SOURCE {
            table.insert_baseline(target, seed, value)
        } else {
            table.insert_entry(source, target, seed, value)
        };
        if previous.is_some() {
            return Err(schema(
                Some(line),
                format!("duplicate row for ({source}, {target}, {seed})"),
            ));
        }
    }
    if table.is_empty() {
        return Err(schema(None, "no data rows".into()));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn load_str(text: &str) -> Result<TransferTable, TensorIoError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("transfer.csv");
        fs::write(&p, text).unwrap();
        load_transfer_table(&p)
    }

    #[test]
    fn entry_and_baseline_rows() {
        let t = load_str("source,target,seed,score\nrecord,cb,112,89.29\n__none__,cb,112,85.64\n").unwrap();
        assert_eq!(t.score("record", "cb", 112), Some(89.29));
        assert_eq!(t.baseline("cb", 112), Some(85.64));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn empty_file_is_schema_error() {
        assert!(matches!(load_str(""), Err(TensorIoError::Schema { .. })));
        assert!(matches!(
            load_str("source,target,seed,score\n"),
            Err(TensorIoError::Schema { .. })
        ));
    }

    #[test]
    fn wrong_header_and_bad_cells() {
        for text in [
            "src,target,seed,score\na,b,1,2\n",
            "source,target,seed,score\na,b,x,2\n",
            "source,target,seed,score\na,b,-1,2\n",
            "source,target,seed,score\na,b,1,abc\n",
            "source,target,seed,score\na,b,1\n",
            "source,target,seed,score\na,b,1,2\na,b,1,3\n",
        ] {
            assert!(matches!(load_str(text), Err(TensorIoError::Schema { .. })), "{text}");
        }
    }

    #[test]
    fn non_finite_score_names_line() {
        match load_str("source,target,seed,score\na,b,1,2\na,b,2,NaN\n") {
            Err(TensorIoError::NonFiniteScore { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_str("source,target,seed,score\na,b,1,inf\n"),
            Err(TensorIoError::NonFiniteScore { .. })
        ));
    }

    #[test]
    fn row_order_does_not_matter() {
        let a = load_str("source,target,seed,score\na,t,1,2\nb,t,1,3\n__none__,t,1,1\n").unwrap();
        let b = load_str("source,target,seed,score\n__none__,t,1,1\nb,t,1,3\na,t,1,2\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_roundtrip() {
        let mut t = TransferTable::new();
        t.insert_entry("mnli", "cb", 112, 87.62);
        t.insert_entry("mnli", "cb", 28, 0.1 + 0.2);
        t.insert_baseline("cb", 112, 85.64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(load_transfer_table(&p).unwrap(), t);
        assert_eq!(t.seeds("mnli", "cb").into_iter().collect::<Vec<_>>(), vec![28, 112]);
    }
}
