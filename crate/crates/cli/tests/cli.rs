//! Black-box tests of the `acs` binary: artifact layout, exit codes, resume
//! semantics, and seed determinism, all through real process invocations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn acs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acs"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn tiny_corpus_config(out_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "out_dir": out_dir,
        "dataset": out_dir.join("corpus").join("manifest.json"),
        "synth": {
            "num_actions": 2,
            "train_videos": 6,
            "test_videos": 3,
            "min_snippets": 16,
            "max_snippets": 24,
            "feature_dim": 8,
        },
        "train": { "base_epochs": 6, "subspace_epochs": 3, "subspace_dim": 2 },
    })
}

#[test]
fn synth_writes_identical_corpora_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let config = write_config(dir.path(), &format!("{run}.json"), tiny_corpus_config(&out));
        let output = acs(&["synth", "--config", config.to_str().unwrap()]);
        assert!(output.status.success());

        let corpus = out.join("corpus");
        let manifest = std::fs::read(corpus.join("manifest.json")).unwrap();
        let mut features: Vec<(String, Vec<u8>)> = std::fs::read_dir(corpus.join("features"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        features.sort();
        assert!(!features.is_empty(), "synth produced no feature files");
        manifests.push((manifest, features));
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn config_and_io_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    // config error: unknown key
    let bad_key = write_config(dir.path(), "bad_key.json", serde_json::json!({"alpa": 0.3}));
    let output = acs(&["synth", "--config", bad_key.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3), "unparseable config is a format error");

    // config error: infeasible corpus geometry
    let mut infeasible = tiny_corpus_config(&out);
    infeasible["synth"]["min_snippets"] = serde_json::json!(4);
    infeasible["synth"]["max_snippets"] = serde_json::json!(4);
    let path = write_config(dir.path(), "infeasible.json", infeasible);
    let output = acs(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error:"), "stderr should explain: {stderr}");

    // missing dataset for train
    let no_data = write_config(
        dir.path(),
        "no_data.json",
        serde_json::json!({ "out_dir": out }),
    );
    let output = acs(&["train", "--config", no_data.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn train_localize_eval_produce_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "run.json", tiny_corpus_config(&out));
    let config = config.to_str().unwrap();

    // localize before training: a clear config error
    assert!(acs(&["synth", "--config", config]).status.success());
    let premature = acs(&["localize", "--config", config]);
    assert_eq!(premature.status.code(), Some(2));

    assert!(acs(&["train", "--config", config]).status.success());
    assert!(acs(&["localize", "--config", config]).status.success());
    assert!(acs(&["eval", "--config", config]).status.success());

    for artifact in [
        "checkpoint.ckpt",
        "train_log.csv",
        "train_run.json",
        "detections.csv",
        "eval.csv",
        "synth_run.json",
        "localize_run.json",
        "eval_run.json",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }

    // the detections table is well-formed CSV with the documented columns
    let mut reader = csv::Reader::from_path(out.join("detections.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        &csv::StringRecord::from(vec!["video_id", "class_name", "start_sec", "end_sec", "score"])
    );
    for row in reader.records() {
        row.unwrap();
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run_across_processes() {
    let dir = tempfile::tempdir().unwrap();

    // one uninterrupted run: 6 base + 3 subspace epochs
    let full_out = dir.path().join("full");
    let full_cfg = write_config(dir.path(), "full.json", tiny_corpus_config(&full_out));
    let full_cfg = full_cfg.to_str().unwrap();
    assert!(acs(&["synth", "--config", full_cfg]).status.success());
    assert!(acs(&["train", "--config", full_cfg]).status.success());

    // the same schedule split into two processes: stop after the base stage,
    // then resume with the full epoch budget
    let split_out = dir.path().join("split");
    let mut head = tiny_corpus_config(&split_out);
    head["train"]["subspace_epochs"] = serde_json::json!(0);
    let head_cfg = write_config(dir.path(), "head.json", head);
    let head_cfg = head_cfg.to_str().unwrap();
    assert!(acs(&["synth", "--config", head_cfg]).status.success());
    assert!(acs(&["train", "--config", head_cfg]).status.success());

    let tail_cfg = write_config(dir.path(), "tail.json", tiny_corpus_config(&split_out));
    let tail_cfg = tail_cfg.to_str().unwrap();
    let resumed = acs(&[
        "train",
        "--config",
        tail_cfg,
        "--resume",
        split_out.to_str().unwrap(),
    ]);
    assert!(resumed.status.success());

    let full_ckpt = std::fs::read(full_out.join("checkpoint.ckpt")).unwrap();
    let split_ckpt = std::fs::read(split_out.join("checkpoint.ckpt")).unwrap();
    assert_eq!(full_ckpt, split_ckpt, "resume reached a different model");

    // the appended log covers the whole schedule exactly once
    let full_log = std::fs::read_to_string(full_out.join("train_log.csv")).unwrap();
    let split_log = std::fs::read_to_string(split_out.join("train_log.csv")).unwrap();
    assert_eq!(full_log, split_log);
}

#[test]
fn ablate_respects_the_variant_filter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "run.json", tiny_corpus_config(&out));
    let config = config.to_str().unwrap();
    assert!(acs(&["synth", "--config", config]).status.success());

    let output = acs(&["ablate", "--config", config, "--variants", "0,3#"]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let mut reader = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let labels: Vec<String> = reader
        .records()
        .map(|r| r.unwrap().get(0).unwrap().to_string())
        .collect();
    assert_eq!(labels, vec!["0#", "3#"]);

    let bad = acs(&["ablate", "--config", config, "--variants", "9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn selftest_passes_and_reports_every_check() {
    let output = acs(&["selftest"]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.contains("0 failed"), "summary line missing: {stdout}");
}
