use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{PipelineError, PromptRef, RunConfig, Workspace};
use crate::ranking_metrics::{EvalReport, Ranking, ALL_CATEGORIES};
use crate::tensor_io::Category;

pub const RANKINGS_FILE: &str = "rankings.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const GAINS_FILE: &str = "gains.csv";
pub const RUN_META_FILE: &str = "run_meta.json";
pub const REPORT_FILE: &str = "report.md";
const PLOT_DIR: &str = "plot_data";

/// Echo of what produced a bundle.
#[derive(Debug, Serialize)]
pub struct RunMeta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub prompt_checkpoints: Vec<&'a PromptRef>,
    pub transfer_seeds: BTreeMap<&'a str, Vec<u64>>,
}

impl<'a> RunMeta<'a> {
    pub fn new(command: &'a str, ws: &'a Workspace) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: &ws.config,
            prompt_checkpoints: ws.prompt_refs().collect(),
            transfer_seeds: ws
                .targets()
                .iter()
                .map(|t| (t.task_id.as_str(), ws.table.target_seeds(&t.task_id).into_iter().collect()))
                .collect(),
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Internal(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_csv(path: &Path, rows: Vec<Vec<String>>) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)
            .map_err(|e| PipelineError::Internal(format!("{}: {e}", path.display())))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| PipelineError::Internal(format!("{}: {e}", path.display())))?;
    write_file(path, &bytes)
}

/// Writes `rankings.json` and `run_meta.json` into the configured output directory.
pub fn write_rankings(ws: &Workspace, rankings: &[Ranking], command: &str) -> Result<(), PipelineError> {
    let dir = &ws.config.output_dir;
    ensure_dir(dir)?;
    write_json(&dir.join(RANKINGS_FILE), &rankings)?;
    write_json(&dir.join(RUN_META_FILE), &RunMeta::new(command, ws))
}

fn summary_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let mut header = vec!["method".to_string(), "category".into(), "ndcg".into()];
    header.extend(report.k_values.iter().map(|k| format!("regret_at_{k}")));
    let mut rows = vec![header];
    let groups: Vec<String> = Category::ALL
        .iter()
        .map(ToString::to_string)
        .chain([ALL_CATEGORIES.to_string()])
        .collect();
    for m in &report.methods {
        for g in &groups {
            let mut row = vec![m.clone(), g.clone()];
            match report.group(g, m) {
                Some(gm) => {
                    row.push(gm.ndcg.to_string());
                    row.extend(report.k_values.iter().map(|k| gm.regret_at_k[k].to_string()));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 1 + report.k_values.len())),
            }
            rows.push(row);
        }
    }
    rows
}

fn gains_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let mut rows = vec![
        ["method", "k", "abs_gain", "rel_gain_pct", "avg_score"].map(String::from).to_vec(),
        vec![
            "no_transfer".into(),
            String::new(),
            String::new(),
            String::new(),
            report.no_transfer_avg_score.to_string(),
        ],
    ];
    for g in &report.transfer_gains {
        rows.push(vec![
            g.method_id.clone(),
            g.k.to_string(),
            g.abs_gain.to_string(),
            g.rel_gain_pct.to_string(),
            g.avg_score.to_string(),
        ]);
    }
    rows
}

/// Writes the full evaluation bundle.
pub fn write_bundle(
    ws: &Workspace,
    rankings: &[Ranking],
    report: &EvalReport,
    command: &str,
) -> Result<(), PipelineError> {
    write_rankings(ws, rankings, command)?;
    let dir = &ws.config.output_dir;
    write_json(&dir.join(METRICS_FILE), report)?;
    write_csv(&dir.join(SUMMARY_FILE), summary_rows(report))?;
    write_csv(&dir.join(GAINS_FILE), gains_rows(report))
}

pub fn read_metrics(dir: &Path) -> Result<EvalReport, PipelineError> {
    let path = dir.join(METRICS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(PipelineError::MissingMetrics { path }),
        Err(source) => return Err(PipelineError::Output { path, source }),
    };
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn pct(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.2}")
    }
}

/// Markdown leaderboard, per-category grid and gains table.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let targets = report
        .overall
        .first()
        .map(|g| g.targets)
        .unwrap_or_default();
    let ks = &report.k_values;
    let k_list: Vec<String> = ks.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "# Task selection report\n");
    let _ = writeln!(
        out,
        "{targets} targets, nDCG depth {}, regret at k = {}. nDCG is scaled by 100.\n",
        report.p,
        k_list.join(", ")
    );
    if let Some(r) = report.random {
        let _ = writeln!(
            out,
            "Random is averaged over {} trials (master seed {}).\n",
            r.trials, r.master_seed
        );
    }

    let regret_head: String = ks.iter().map(|k| format!(" R@{k} |")).collect();
    let regret_rule: String = ks.iter().map(|_| "---:|").collect();
    let _ = writeln!(out, "## Leaderboard\n");
    let _ = writeln!(out, "| rank | method | nDCG |{regret_head}");
    let _ = writeln!(out, "|---:|---|---:|{regret_rule}");
    let mut board: Vec<_> = report.overall.iter().collect();
    let first_k = ks.first().copied();
    board.sort_by(|a, b| {
        b.ndcg
            .total_cmp(&a.ndcg)
            .then_with(|| {
                let r = |g: &&crate::ranking_metrics::GroupMetrics| first_k.map_or(0.0, |k| g.regret_at_k[&k]);
                r(a).total_cmp(&r(b))
            })
            .then_with(|| a.method_id.cmp(&b.method_id))
    });
    for (i, g) in board.iter().enumerate() {
        let regrets: String = ks.iter().map(|k| format!(" {} |", pct(g.regret_at_k[k]))).collect();
        let _ = writeln!(out, "| {} | {} | {} |{regrets}", i + 1, g.method_id, pct(100.0 * g.ndcg));
    }

    let _ = writeln!(out, "\n## By category\n");
    let groups: Vec<String> = Category::ALL
        .iter()
        .map(ToString::to_string)
        .chain([ALL_CATEGORIES.to_string()])
        .collect();
    let mut head = String::from("| method |");
    let mut rule = String::from("|---|");
    for g in &groups {
        let _ = write!(head, " {g} nDCG |");
        rule.push_str("---:|");
        for k in ks {
            let _ = write!(head, " {g} R@{k} |");
            rule.push_str("---:|");
        }
    }
    let _ = writeln!(out, "{head}\n{rule}");
    for m in &report.methods {
        let mut line = format!("| {m} |");
        for g in &groups {
            match report.group(g, m) {
                Some(gm) => {
                    let _ = write!(line, " {} |", pct(100.0 * gm.ndcg));
                    for k in ks {
                        let _ = write!(line, " {} |", pct(gm.regret_at_k[k]));
                    }
                }
                None => line.push_str(&" - |".repeat(1 + ks.len())),
            }
        }
        let _ = writeln!(out, "{line}");
    }

    let _ = writeln!(out, "\n## Best of top k\n");
    let _ = writeln!(out, "| method | k | gain | relative gain (%) | avg score |");
    let _ = writeln!(out, "|---|---:|---:|---:|---:|");
    let _ = writeln!(out, "| no transfer | | | | {} |", pct(report.no_transfer_avg_score));
    for g in &report.transfer_gains {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            g.method_id,
            g.k,
            pct(g.abs_gain),
            pct(g.rel_gain_pct),
            pct(g.avg_score)
        );
    }

    if !report.warnings.is_empty() {
        let _ = writeln!(out, "\n## Warnings\n");
        for w in &report.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}

/// Writes `report.md` next to the metrics and returns its text.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<String, PipelineError> {
    let text = render_markdown(report);
    write_file(&dir.join(REPORT_FILE), text.as_bytes())?;
    Ok(text)
}

/// One CSV per target under `plot_data/`, a row per method.
pub fn write_plot_data(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>, PipelineError> {
    let plot_dir = dir.join(PLOT_DIR);
    ensure_dir(&plot_dir)?;
    let mut by_target: BTreeMap<&str, Vec<&crate::ranking_metrics::TargetMetrics>> = BTreeMap::new();
    for t in &report.per_target {
        by_target.entry(&t.target_id).or_default().push(t);
    }
    let mut written = Vec::new();
    for (target, cells) in by_target {
        let mut header = vec!["method".to_string(), "ndcg".into()];
        header.extend(report.k_values.iter().map(|k| format!("regret_at_{k}")));
        let mut rows = vec![header];
        for c in cells {
            let mut row = vec![c.method_id.clone(), c.ndcg.to_string()];
            row.extend(report.k_values.iter().map(|k| c.regret_at_k[k].to_string()));
            rows.push(row);
        }
        let path = plot_dir.join(format!("{target}.csv"));
        write_csv(&path, rows)?;
        written.push(path);
    }
    Ok(written)
}
