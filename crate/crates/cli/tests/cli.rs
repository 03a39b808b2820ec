use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/minidrop.json")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dropforge"))
        .args(args)
        .current_dir(dir)
        .env("DROPFORGE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn oracle_pipeline_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset();
    let data = data.to_str().unwrap();
    ok(&["ingest", data, "-o", "ex.jsonl"], d);
    let examples = lines(&d.join("ex.jsonl"));
    assert_eq!(examples.len(), 8);
    for key in ["example_id", "sequence", "numbers", "golds"] {
        assert!(examples[0].get(key).is_some(), "missing {key}");
    }

    ok(&["annotate", "ex.jsonl", "-o", "ann.jsonl"], d);
    assert_eq!(lines(&d.join("ann.jsonl")).len(), 8);

    let table = ok(&["stats", "ann.jsonl"], d);
    assert!(table.contains("Skipped") && table.contains("Ratio"));
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().last().unwrap().trim_end().ends_with("100.0"));
    let single = ok(&["stats", "ann.jsonl", "--kinds", "span"], d);
    assert_eq!(single.lines().count(), 2);

    ok(&["decode", "ex.jsonl", "--oracle", "ann.jsonl", "-o", "preds.jsonl"], d);
    let preds = lines(&d.join("preds.jsonl"));
    let ids: Vec<&str> = preds.iter().map(|p| p["example_id"].as_str().unwrap()).collect();
    let want: Vec<&str> = examples.iter().map(|e| e["example_id"].as_str().unwrap()).collect();
    assert_eq!(ids, want);
    let q3 = preds.iter().find(|p| p["example_id"] == "census_2000-q3").unwrap();
    assert_eq!(q3["answer_type"], "add_sub");
    assert_eq!(q3["answer_texts"][0], "138923");
    assert!(q3["trace"]["beam"].as_array().is_some_and(|b| !b.is_empty()));

    let report: Value = serde_json::from_str(&ok(&["eval", "preds.jsonl", data], d)).unwrap();
    assert_eq!(report["em"], 100.0);
    assert_eq!(report["f1"], 100.0);
    assert!(report["per_type"]["multi-span"].is_object());
}

#[test]
fn weights_and_mock_decoding_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset();
    ok(&["ingest", data.to_str().unwrap(), "-o", "ex.jsonl"], d);
    ok(&["gen-weights", "w", "--seed", "5", "--dim", "16"], d);
    assert!(d.join("w/manifest.json").exists());
    ok(
        &[
            "decode",
            "ex.jsonl",
            "--weights",
            "w",
            "--mock-seed",
            "5",
            "-o",
            "a.jsonl",
        ],
        d,
    );
    ok(
        &["decode", "ex.jsonl", "--mock-seed", "5", "--dim", "16", "-o", "b.jsonl"],
        d,
    );
    // Saved weights are f32, so only the decoded answers are compared.
    let answers = |f: &str| -> Vec<(Value, Value)> {
        lines(&d.join(f))
            .into_iter()
            .map(|p| (p["answer_type"].clone(), p["answer_texts"].clone()))
            .collect()
    };
    assert_eq!(answers("a.jsonl"), answers("b.jsonl"));
    assert_eq!(answers("a.jsonl").len(), 8);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["selftest"], dir.path());
    assert!(out.contains("EM 100.0  F1 100.0"));
    assert!(out.contains("selftest passed"));
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset();
    ok(&["ingest", data.to_str().unwrap(), "-o", "ex.jsonl"], d);
    assert_eq!(run(&["decode", "ex.jsonl"], d).status.code(), Some(2));
    assert_eq!(
        run(&["decode", "ex.jsonl", "--mock-seed", "1", "--top-k", "3"], d)
            .status
            .code(),
        Some(2)
    );
    assert!(!run(&["ingest", "missing.json"], d).status.success());
    assert!(!run(&["stats", "ex.jsonl", "--kinds", "bogus"], d).status.success());
}
