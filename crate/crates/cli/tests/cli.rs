use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxext_core::checkpoint;
use ctxext_core::dataset::RetrievalTask;
use ctxext_core::eval::EvalReport;
use ctxext_core::synth::{generate, SyntheticTaskConfig, TaskKind};
use tempfile::TempDir;

fn ctxext(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxext"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ctxext(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32) -> String {
    let out = ctxext(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn bucket_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

/// Small absolute model plus training triples.
fn toy_setup(dir: &Path) {
    ok(dir, &["init", "--out", "m.ckpt", "--hidden-size", "16", "--n-heads", "2", "--n-layers", "1", "--original-context", "32", "--vocab-size", "300"]);
    ok(dir, &["triples", "--count", "24", "--max-words", "24", "--out", "t.jsonl"]);
}

#[test]
fn gen_default_grid_writes_eight_buckets() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen", "--out", "all"]);
    let dirs = bucket_dirs(&tmp.path().join("all"));
    assert_eq!(dirs.len(), 8);
    for d in dirs {
        let task = RetrievalTask::read_dir(&d).unwrap();
        assert_eq!((task.queries.len(), task.documents.len()), (50, 100));
    }
}

#[test]
fn gen_is_deterministic_and_round_trips() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        ok(tmp.path(), &["gen", "--kind", "needle", "--length-grid", "256", "--seed", "9", "--out", out]);
    }
    let a = bucket_dirs(&tmp.path().join("a"));
    assert_eq!(a.len(), 1);
    for f in ["queries.jsonl", "corpus.jsonl", "qrels.tsv", "task.json"] {
        let x = fs::read(a[0].join(f)).unwrap();
        let y = fs::read(tmp.path().join("b/needle-256").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let expected = generate(&SyntheticTaskConfig {
        length_grid: vec![256],
        ..SyntheticTaskConfig::new(TaskKind::Needle, 9)
    })
    .unwrap();
    assert_eq!(RetrievalTask::read_dir(&a[0]).unwrap(), expected[0].task);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "seed = 5\n[gen]\nlength_grid = [256, 512]\nqueries_per_length = 3\ncandidates_per_length = 4\nout = \"from_file\"\n",
    )
    .unwrap();
    ok(tmp.path(), &["--config", "run.toml", "gen", "--length-grid", "256"]);
    let dirs = bucket_dirs(&tmp.path().join("from_file"));
    assert_eq!(dirs.len(), 1);
    let task = RetrievalTask::read_dir(&dirs[0]).unwrap();
    assert_eq!((task.queries.len(), task.documents.len()), (3, 4));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("from_file/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["seed"], 5);
    assert_eq!(manifest["settings"]["length_grid"], serde_json::json!([256]));

    fs::write(tmp.path().join("bad.toml"), "[gen]\nnot_a_setting = 1\n").unwrap();
    fails_with(tmp.path(), &["--config", "bad.toml", "gen", "--out", "x"], 2);
}

#[test]
fn eval_writes_report_with_resolved_config() {
    let tmp = TempDir::new().unwrap();
    toy_setup(tmp.path());
    ok(tmp.path(), &["gen", "--length-grid", "32,40", "--queries-per-length", "4", "--candidates-per-length", "6", "--out", "tasks"]);
    let stdout = ok(tmp.path(), &["eval", "--model", "m.ckpt", "--tasks", "tasks", "--out", "r.json"]);
    assert!(stdout.contains("average"));
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report.tasks.len(), 2);
    assert!(report.tasks.iter().all(|t| t.length_errors == 0 && t.documents == 6));
    let mean = report.tasks.iter().map(|t| t.score).sum::<f64>() / 2.0;
    assert!((report.average - mean).abs() < 1e-12);
    assert_eq!(report.tool_version, env!("CARGO_PKG_VERSION"));
    assert!(report.timestamp.is_some());
    assert_eq!(report.seed, Some(42));
    assert_eq!(report.config["settings"]["strategy"], "none");
    assert_eq!(report.config["settings"]["target_context"], 32);
}

#[test]
fn eval_rejects_infeasible_self_extend_before_encoding() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["init", "--out", "r.ckpt", "--position-mode", "rotary", "--hidden-size", "16", "--n-heads", "2", "--original-context", "32"]);
    let err = fails_with(
        tmp.path(),
        &["eval", "--model", "r.ckpt", "--tasks", "missing", "--strategy", "se", "--target-context", "128", "--se-group", "2", "--se-window", "4", "--out", "r.json"],
        2,
    );
    assert!(err.contains("self-extend"), "{err}");
    assert!(!tmp.path().join("r.json").exists());
}

#[test]
fn malformed_jsonl_reports_line_number() {
    let tmp = TempDir::new().unwrap();
    toy_setup(tmp.path());
    ok(tmp.path(), &["gen", "--length-grid", "32", "--queries-per-length", "2", "--candidates-per-length", "3", "--out", "tasks"]);
    let q = tmp.path().join("tasks/passkey-32/queries.jsonl");
    let mut text = fs::read_to_string(&q).unwrap();
    text.push_str("{not json\n");
    fs::write(&q, text).unwrap();
    let err = fails_with(tmp.path(), &["eval", "--model", "m.ckpt", "--tasks", "tasks"], 3);
    assert!(err.contains("queries.jsonl:3"), "{err}");
}

#[test]
fn tune_with_zero_epochs_keeps_the_checkpoint() {
    let tmp = TempDir::new().unwrap();
    toy_setup(tmp.path());
    ok(tmp.path(), &["tune", "--model", "m.ckpt", "--data", "t.jsonl", "--target-context", "128", "--epochs", "0", "--out", "same.ckpt"]);
    assert_eq!(fs::read(tmp.path().join("m.ckpt")).unwrap(), fs::read(tmp.path().join("same.ckpt")).unwrap());
}

#[test]
fn pi_tuning_freezes_the_original_rows_and_replays() {
    let tmp = TempDir::new().unwrap();
    toy_setup(tmp.path());
    let args = |out: &'static str| {
        vec!["tune", "--model", "m.ckpt", "--data", "t.jsonl", "--target-context", "128", "--mode", "pi_anchored", "--epochs", "1", "--batch-size", "8", "--warmup-steps", "1", "--out", out]
    };
    ok(tmp.path(), &args("a.ckpt"));
    ok(tmp.path(), &args("b.ckpt"));
    let model = checkpoint::load(&tmp.path().join("a.ckpt")).unwrap();
    let ext = model.extended_table().unwrap();
    assert_eq!(ext.table.len(), 128);
    assert_eq!(ext.table.frozen_count(), 32);
    let log = fs::read_to_string(tmp.path().join("a.ckpt.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert_eq!(log, fs::read_to_string(tmp.path().join("b.ckpt.log.tsv")).unwrap());
    assert_eq!(fs::read(tmp.path().join("a.ckpt")).unwrap(), fs::read(tmp.path().join("b.ckpt")).unwrap());
}

#[test]
fn tune_refuses_rotary_models() {
    let tmp = TempDir::new().unwrap();
    toy_setup(tmp.path());
    ok(tmp.path(), &["init", "--out", "r.ckpt", "--position-mode", "rotary", "--hidden-size", "16", "--n-heads", "2", "--original-context", "32"]);
    let err = fails_with(tmp.path(), &["tune", "--model", "r.ckpt", "--data", "t.jsonl", "--target-context", "64", "--out", "x.ckpt"], 2);
    assert!(err.contains("further tuning requires absolute-position mode"), "{err}");
}

fn write_fixture(dir: &Path, extra_qrel: &str) {
    fs::write(
        dir.join("queries.jsonl"),
        "{\"_id\":\"q1\",\"text\":\"who wrote it\"}\n{\"_id\":\"q2\",\"text\":\"when\"}\n{\"_id\":\"q3\",\"text\":\"where is the river\"}\n",
    )
    .unwrap();
    fs::write(
        dir.join("corpus.jsonl"),
        "{\"_id\":\"d1\",\"title\":\"A\",\"text\":\"one two three\"}\n{\"_id\":\"d2\",\"title\":\"\",\"text\":\"four five\"}\n",
    )
    .unwrap();
    fs::write(
        dir.join("qrels.tsv"),
        format!("query-id\tcorpus-id\tscore\nq1\td1\t1\nq2\td2\t1\nq3\td1\t2\n{extra_qrel}"),
    )
    .unwrap();
}

#[test]
fn ingest_prints_stats_and_lists_dangling_ids() {
    let tmp = TempDir::new().unwrap();
    write_fixture(tmp.path(), "");
    let args = ["ingest", "--queries", "queries.jsonl", "--corpus", "corpus.jsonl", "--qrels", "qrels.tsv"];
    let stats: serde_json::Value = serde_json::from_str(&ok(tmp.path(), &args)).unwrap();
    assert_eq!(stats["queries"], 3);
    assert_eq!(stats["documents"], 2);
    assert_eq!(stats["qrels"], 3);
    assert!((stats["mean_query_words"].as_f64().unwrap() - 8.0 / 3.0).abs() < 1e-12);
    assert!((stats["mean_document_words"].as_f64().unwrap() - 3.0).abs() < 1e-12);

    write_fixture(tmp.path(), "q2\td9\t1\n");
    let err = fails_with(tmp.path(), &args, 3);
    assert!(err.contains("d9"), "{err}");
}

#[test]
fn inspect_dumps_positions_and_frequencies() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["inspect", "--strategy", "ntk", "--original-context", "512", "--target-context", "2048", "--len", "3", "--head-dim", "8"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["ntk_lambda"], 5.0);
    assert_eq!(v["plan"]["phases"], serde_json::json!([0.0, 1.0, 2.0]));
    let thetas = v["thetas"].as_array().unwrap();
    assert_eq!(thetas.len(), 4);
    assert_eq!(thetas[0], 1.0);

    let out = ok(tmp.path(), &["inspect", "--strategy", "gp", "--position-mode", "absolute", "--original-context", "4", "--target-context", "8"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["plan"]["rows"], serde_json::json!([0, 0, 1, 1, 2, 2, 3, 3]));
}
