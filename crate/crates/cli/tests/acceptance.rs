//! The eight acceptance gates. Each test checks one criterion at its stated
//! tolerance and prints a single `criterion N: PASS — …` line, so a
//! `--nocapture` run reads as a checklist.
//!
//! 1. finite-difference gradients, per-op and composed, rel err < 1e-4
//! 2. snippet partition vs brute-force predicates on an exhaustive grid
//! 3. loss closed forms (ln 2, ln 4, 2m) to 1e-12
//! 4. contrastive interval score vs explicit summation to 1e-12
//! 5. average precision vs exhaustive matching enumeration
//! 6. ablation: median gain of the full model (and of the proposal+scoring
//!    variant) over the attention-only baseline is strictly positive
//! 7. sensitivity: full-model mAP spread over the α×β grid is smaller than
//!    the baseline's spread over β
//! 8. byte-identical CSVs when the train/localize/eval chain runs twice

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use acs_core::evaluation::{default_thresholds, DEFAULT_AVG_RANGE};
use acs_core::experiments::{run_ablation, run_sweep, ExperimentCorpus};
use acs_core::localization::InferenceConfig;
use acs_core::selftest;
use acs_core::synthetic::{generate_corpus, SynthConfig};
use acs_core::training::TrainConfig;

fn assert_checks(criterion: usize, what: &str, checks: Vec<selftest::CheckResult>) {
    let failed: Vec<&selftest::CheckResult> = checks.iter().filter(|c| !c.passed).collect();
    assert!(
        failed.is_empty(),
        "criterion {criterion}: FAIL — {}",
        failed
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    );
    println!("criterion {criterion}: PASS — {what} ({} checks)", checks.len());
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut checks = selftest::op_gradient_checks();
    checks.extend(selftest::composed_gradient_checks());
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 30,
        "criterion 1: FAIL — gradient battery took {elapsed:?}, budget 30 s"
    );
    assert_checks(
        1,
        &format!(
            "per-op and composed-loss gradients within {:.0e} in {elapsed:.2?}",
            selftest::FD_TOL
        ),
        checks,
    );
}

#[test]
fn criterion_2_partition_matches_brute_force_grid() {
    let check = selftest::partition_grid_check();
    assert_checks(2, &check.detail.clone(), vec![check]);
}

#[test]
fn criterion_3_loss_closed_forms() {
    let check = selftest::loss_closed_form_check();
    assert_checks(3, &check.detail.clone(), vec![check]);
}

#[test]
fn criterion_4_interval_score_matches_explicit_summation() {
    let check = selftest::oic_random_check(1000, 41);
    assert_checks(4, &check.detail.clone(), vec![check]);
}

#[test]
fn criterion_5_average_precision_matches_enumeration() {
    let check = selftest::ap_enumeration_check();
    assert_checks(5, &check.detail.clone(), vec![check]);
}

#[test]
fn criterion_6_component_gains_are_positive_in_median() {
    let started = Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];
    let mut gains_full = Vec::new();
    let mut gains_proposals = Vec::new();
    for &seed in &seeds {
        let corpus = generate_corpus(&SynthConfig { seed, ..SynthConfig::default() })
            .expect("default corpus generates");
        let experiment = ExperimentCorpus::from_generated(&corpus);
        let table = run_ablation(
            &experiment,
            &TrainConfig { seed, ..TrainConfig::default() },
            &InferenceConfig::default(),
            &[0, 3, 5],
            &default_thresholds(),
            DEFAULT_AVG_RANGE,
        )
        .expect("ablation runs");
        let gain = |variant: usize| {
            table
                .rows
                .iter()
                .find(|r| r.variant == variant)
                .and_then(|r| r.gain_vs_baseline)
                .expect("gain vs variant 0 present")
        };
        gains_proposals.push(gain(3));
        gains_full.push(gain(5));
    }
    let elapsed = started.elapsed();

    let median = |values: &[f64]| {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted[sorted.len() / 2]
    };
    let med_full = median(&gains_full);
    let med_proposals = median(&gains_proposals);

    assert!(
        elapsed.as_secs() < 3600,
        "criterion 6: FAIL — 5-seed ablation took {elapsed:?}, budget 60 min"
    );
    assert!(
        med_full > 0.0,
        "criterion 6: FAIL — median full-model gain {med_full:.4} not positive \
         (per-seed {gains_full:?})"
    );
    assert!(
        med_proposals > 0.0,
        "criterion 6: FAIL — median proposal+scoring gain {med_proposals:.4} not positive \
         (per-seed {gains_proposals:?})"
    );
    println!(
        "criterion 6: PASS — median avg-mAP gain over baseline: full model {med_full:+.4}, \
         proposal+scoring {med_proposals:+.4} across {} seeds in {elapsed:.0?}",
        seeds.len()
    );
}

#[test]
fn criterion_7_full_model_is_less_sensitive_than_baseline() {
    let corpus = generate_corpus(&SynthConfig::default()).expect("default corpus generates");
    let experiment = ExperimentCorpus::from_generated(&corpus);
    let table = run_sweep(
        &experiment,
        &TrainConfig::default(),
        &InferenceConfig::default(),
        &[0.1, 0.2, 0.3, 0.4],
        &[0.4, 0.5, 0.6],
        &default_thresholds(),
        DEFAULT_AVG_RANGE,
    )
    .expect("sweep runs");
    let full = table.full_model_spread().expect("12 grid rows");
    let base = table.baseline_spread().expect("3 reference rows");
    assert!(
        full < base,
        "criterion 7: FAIL — full-model spread {full:.4} not below baseline spread {base:.4}"
    );
    println!(
        "criterion 7: PASS — avg-mAP spread {full:.4} across the 12-cell grid vs {base:.4} \
         for the baseline across fusion weights"
    );
}

fn run_cli(args: &[&str], config: &Path) {
    let output = Command::new(env!("CARGO_BIN_EXE_acs"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary spawns");
    assert!(
        output.status.success(),
        "`acs {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn criterion_8_csv_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let config_path = dir.path().join(format!("{run}.json"));
        let config = serde_json::json!({
            "out_dir": out_dir,
            "dataset": out_dir.join("corpus").join("manifest.json"),
            "synth": {
                "num_actions": 2,
                "train_videos": 10,
                "test_videos": 5,
                "min_snippets": 20,
                "max_snippets": 30,
                "feature_dim": 16,
            },
            "train": { "base_epochs": 240, "subspace_epochs": 60, "subspace_dim": 4 },
        });
        std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

        run_cli(&["synth"], &config_path);
        run_cli(&["train"], &config_path);
        run_cli(&["localize"], &config_path);
        run_cli(&["eval"], &config_path);

        let csvs = ["train_log.csv", "detections.csv", "eval.csv"].map(|name| {
            std::fs::read(out_dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
        });
        outputs.push(csvs);
    }
    for (i, name) in ["train_log.csv", "detections.csv", "eval.csv"].iter().enumerate() {
        assert_eq!(
            outputs[0][i], outputs[1][i],
            "criterion 8: FAIL — {name} differs between identically-seeded runs"
        );
    }
    println!(
        "criterion 8: PASS — train/localize/eval CSVs byte-identical across two fresh processes"
    );
}
