use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taskrank::pipeline::{self, PipelineError};
use taskrank::ranking_metrics::{EvalReport, Ranking};
use taskrank::tensor_io::{load_prompt_matrix, save_prompt_matrix, PromptMatrix};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taskrank"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn taskrank")
}

fn ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(dir: &Path) -> PathBuf {
    ok(bin().args(["export-fixture", "--rows", "20", "--cols", "64", "--out"]).arg(dir));
    dir.join("config.json")
}

/// Three sources scoring 3, 2, 1 on the target, with sizes ordering them b, a, c.
fn hand_workspace(dir: &Path) -> PathBuf {
    let manifest = serde_json::json!({
        "tasks": [
            {"id": "a", "name": "A", "category": "classification", "train_size": 200, "role": "source"},
            {"id": "b", "name": "B", "category": "classification", "train_size": 300, "role": "source"},
            {"id": "c", "name": "C", "category": "qa", "train_size": 100, "role": "source"},
            {"id": "t", "name": "T", "category": "classification", "train_size": 50, "role": "target"}
        ],
        "artifacts": []
    });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    fs::write(
        dir.join("transfer.csv"),
        "source,target,seed,score\n__none__,t,1,1\na,t,1,3\nb,t,1,2\nc,t,1,1\n",
    )
    .unwrap();
    let config = serde_json::json!({
        "manifest_path": "manifest.json",
        "transfer_table_path": "transfer.csv",
        "methods": ["size"],
        "k_values": [1, 3],
        "output_dir": "out"
    });
    let path = dir.join("config.json");
    fs::write(&path, config.to_string()).unwrap();
    path
}

fn rankings(dir: &Path) -> Vec<Ranking> {
    serde_json::from_str(&fs::read_to_string(dir.join(pipeline::RANKINGS_FILE)).unwrap()).unwrap()
}

fn metrics(dir: &Path) -> EvalReport {
    pipeline::read_metrics(dir).unwrap()
}

#[test]
fn validate_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = ok(bin().arg("validate").arg("--config").arg(&config));
    assert_eq!(out.trim(), "OK, 13 sources, 10 targets, 6 methods");
}

#[test]
fn missing_prompt_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    fs::remove_file(dir.path().join("prompts/mnli.s42.k30000.ptns")).unwrap();

    let out = run(bin().arg("validate").arg("--config").arg(&config).args(["--methods", "max"]));
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("MissingArtifact") && err.contains("mnli"), "{err}");
}

#[test]
fn unigram_needs_matching_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let path = dir.path().join("prompts/rte.s42.k30000.ptns");
    let m = load_prompt_matrix(&path).unwrap();
    let rows: Vec<Vec<f64>> = m.iter_rows().take(m.rows() - 5).map(<[f64]>::to_vec).collect();
    let shorter = PromptMatrix::new(
        m.task_id(),
        m.seed(),
        m.step(),
        rows.len(),
        m.cols(),
        rows.concat(),
    )
    .unwrap();
    save_prompt_matrix(&shorter, &path).unwrap();

    let out = run(bin().arg("validate").arg("--config").arg(&config).args(["--methods", "unigram"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("DimensionMismatch"), "{}", stderr(&out));

    ok(bin().arg("validate").arg("--config").arg(&config).args(["--methods", "feature,max"]));
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = hand_workspace(dir.path());

    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    doc["methods"] = serde_json::json!([]);
    fs::write(&config, doc.to_string()).unwrap();
    let out = run(bin().arg("validate").arg("--config").arg(&config));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    doc["methods"] = serde_json::json!(["size"]);
    doc["surprise"] = serde_json::json!(1);
    fs::write(&config, doc.to_string()).unwrap();
    let out = run(bin().arg("validate").arg("--config").arg(&config));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let out = run(bin().arg("validate").arg("--config").arg(&config).env(pipeline::THREADS_ENV, "zero"));
    assert_eq!(out.status.code(), Some(2));

    let out = run(bin().args(["validate", "--manifest", "m.json"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn k_beyond_candidates_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = hand_workspace(dir.path());
    let out = run(bin().arg("validate").arg("--config").arg(&config).args(["--k", "1,4"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_table_task_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = hand_workspace(dir.path());
    let mut table = fs::read_to_string(dir.path().join("transfer.csv")).unwrap();
    table.push_str("ghost,t,1,99\n");
    fs::write(dir.path().join("transfer.csv"), table).unwrap();
    let out = run(bin().arg("validate").arg("--config").arg(&config));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("UnknownTask"), "{}", stderr(&out));
}

#[test]
fn report_without_metrics_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().arg("report").arg("--out").arg(dir.path()));
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("run eval first"));
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(PipelineError::Validation(Vec::new()).exit_code(), 2);
    assert_eq!(PipelineError::Data("x".into()).exit_code(), 3);
    assert_eq!(PipelineError::MissingMetrics { path: "x".into() }.exit_code(), 3);
    assert_eq!(PipelineError::Internal("x".into()).exit_code(), 4);
}

#[test]
fn random_rankings_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(bin().arg("rank").arg("--config").arg(&config).args(["--methods", "random"]).arg("--out").arg(out));
    }
    let read = |d: &Path| fs::read(d.join(pipeline::RANKINGS_FILE)).unwrap();
    assert_eq!(read(&a), read(&b));

    let c = dir.path().join("c");
    ok(bin().arg("rank").arg("--config").arg(&config).args(["--methods", "random", "--seed", "1"]).arg("--out").arg(&c));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn size_puts_the_largest_source_first() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = dir.path().join("out");
    ok(bin().arg("rank").arg("--config").arg(&config).args(["--methods", "size"]));
    let all = rankings(&out);
    assert_eq!(all.len(), 10);
    for r in &all {
        assert_eq!(r.source_ids().next(), Some("mnli"), "{}", r.target_id());
        assert_eq!(r.len(), 13);
    }
}

#[test]
fn hand_fixture_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = hand_workspace(dir.path());
    ok(bin().arg("eval").arg("--config").arg(&config));
    let report = metrics(&dir.path().join("out"));

    let size = &report.per_target[0];
    assert_eq!(size.method_id, "size");
    assert!((size.ndcg - 0.84282).abs() <= 1e-4, "{}", size.ndcg);
    assert!((size.regret_at_k[&1] - 100.0 / 3.0).abs() <= 1e-9);
    assert_eq!(size.regret_at_k[&3], 0.0);

    let gains: Vec<(&str, usize)> = report
        .transfer_gains
        .iter()
        .map(|g| (g.method_id.as_str(), g.k))
        .collect();
    assert_eq!(gains, [("size", 1)]);
    assert_eq!(report.no_transfer_avg_score, 1.0);
    assert_eq!(report.transfer_gains[0].avg_score, 2.0);
}

#[test]
fn perfect_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let config = hand_workspace(dir.path());
    // Make size order agree with transfer order.
    fs::write(
        dir.path().join("transfer.csv"),
        "source,target,seed,score\n__none__,t,1,1\na,t,1,2\nb,t,1,3\nc,t,1,1\n",
    )
    .unwrap();
    ok(bin().arg("eval").arg("--config").arg(&config));
    let m = &metrics(&dir.path().join("out")).per_target[0];
    assert_eq!(m.ndcg, 1.0);
    assert!(m.regret_at_k.values().all(|&r| r == 0.0));
}

#[test]
fn eval_and_report_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = dir.path().join("out");
    ok(bin().arg("eval").arg("--config").arg(&config).args(["--trials", "200"]));
    for f in [
        pipeline::RANKINGS_FILE,
        pipeline::RUN_META_FILE,
        pipeline::METRICS_FILE,
        pipeline::SUMMARY_FILE,
        pipeline::GAINS_FILE,
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let gains = fs::read_to_string(out.join(pipeline::GAINS_FILE)).unwrap();
    let keys: Vec<String> = gains.lines().skip(2).map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(
        keys,
        [
            "random,1", "size,1", "semb:fixture,1", "semb:fixture,3", "feature,1", "feature,3", "unigram,1",
            "unigram,3", "max,1", "max,3"
        ]
    );

    let text = ok(bin().arg("report").arg("--out").arg(&out).arg("--plot-data"));
    assert_eq!(text, fs::read_to_string(out.join(pipeline::REPORT_FILE)).unwrap());
    for method in ["random", "size", "semb:fixture", "feature", "unigram", "max"] {
        assert!(text.contains(&format!("| {method} |")), "{method}");
    }

    let plots: Vec<_> = fs::read_dir(out.join("plot_data")).unwrap().collect();
    assert_eq!(plots.len(), 10);
    let cb = fs::read_to_string(out.join("plot_data/cb.csv")).unwrap();
    assert_eq!(cb.lines().count(), 7);
    assert!(cb.starts_with("method,ndcg,regret_at_1,regret_at_3\n"));
}

#[test]
fn random_monte_carlo_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let config = hand_workspace(dir.path());
    let mean_ndcg = |seed: &str| {
        let out = dir.path().join(seed);
        ok(bin()
            .arg("eval")
            .arg("--config")
            .arg(&config)
            .args(["--methods", "random", "--trials", "100000", "--seed", seed])
            .arg("--out")
            .arg(&out));
        let report = metrics(&out);
        assert_eq!(report.random.as_ref().unwrap().trials, 100_000);
        report.per_target[0].ndcg
    };
    let (a, b) = (mean_ndcg("1"), mean_ndcg("2"));
    assert!((a - b).abs() <= 0.005, "{a} vs {b}");
}
