//! One function per subcommand. Every command writes its artifacts under
//! `out_dir` plus a `<command>_run.json` record of the exact configuration
//! that produced them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use acs_core::data::{Dataset, Split};
use acs_core::evaluation::{
    collect_gt, map_report, read_detections, write_detections, write_report,
};
use acs_core::experiments::{
    run_ablation, run_sweep, write_ablation_csv, write_sweep_csv, ExperimentCorpus,
};
use acs_core::localization::localize_videos;
use acs_core::model::TwoStreamModel;
use acs_core::selftest;
use acs_core::synthetic::generate_corpus;
use acs_core::training::{train_dataset, train_from, EpochLog};
use acs_core::{Error, Result};

use crate::config::RunConfig;

const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const TRAIN_LOG_FILE: &str = "train_log.csv";
const TRAIN_RECORD_FILE: &str = "train_run.json";

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))
}

fn write_record(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<PathBuf> {
    let mut record = json!({
        "command": command,
        "config": cfg,
    });
    if let (Some(obj), Some(extra)) = (record.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    let path = cfg.out_dir.join(format!("{command}_run.json"));
    let mut text =
        serde_json::to_string_pretty(&record).map_err(|e| Error::format(&path, e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn elapsed_secs(started: Instant) -> f64 {
    (started.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    ensure_out_dir(cfg)?;
    let corpus_dir = cfg.out_dir.join("corpus");
    let corpus = generate_corpus(&cfg.synth)?;
    corpus.write_to_dir(&corpus_dir)?;

    let manifest = &corpus.manifest;
    let by_split = |split: Split| manifest.videos.iter().filter(|v| v.split == split).count();
    let instances: usize = manifest.videos.iter().map(|v| v.ground_truth.len()).sum();
    let snippets: usize = manifest.videos.iter().map(|v| v.snippet_count).sum();
    let manifest_path = corpus_dir.join("manifest.json");

    write_record(
        cfg,
        "synth",
        json!({
            "manifest": manifest_path,
            "train_videos": by_split(Split::Train),
            "test_videos": by_split(Split::Test),
            "classes": manifest.class_names.len(),
            "action_instances": instances,
            "snippets": snippets,
            "elapsed_secs": elapsed_secs(started),
        }),
    )?;

    println!(
        "corpus: {} train + {} test videos, {} classes, {} action instances, {} snippets",
        by_split(Split::Train),
        by_split(Split::Test),
        manifest.class_names.len(),
        instances,
        snippets
    );
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

/// Loss-log rows, one per (epoch, stream). `append` continues an existing
/// file without repeating the header, so a resumed run keeps one log.
fn write_train_log(path: &Path, logs: &[EpochLog], append: bool) -> Result<()> {
    let continuing = append && path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(continuing)
        .write(true)
        .truncate(!continuing)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if !continuing {
        w.write_record(["epoch", "stream", "base", "triplet", "classification", "residual", "total"])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    for log in logs {
        w.write_record([
            log.epoch.to_string(),
            log.stream.clone(),
            format!("{:.6}", log.base),
            format!("{:.6}", log.triplet),
            format!("{:.6}", log.classification),
            format!("{:.6}", log.residual),
            format!("{:.6}", log.total),
        ])
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The epoch counter a previous run stopped at, from its run record.
fn resume_epoch(dir: &Path) -> Result<usize> {
    let record_path = dir.join(TRAIN_RECORD_FILE);
    let text = std::fs::read_to_string(&record_path).map_err(|e| Error::io(&record_path, e))?;
    let record: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&record_path, e.to_string()))?;
    record["next_epoch"]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::format(&record_path, "no \"next_epoch\" field".to_string()))
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let dataset = Dataset::load(cfg.dataset_path()?)?;
    ensure_out_dir(cfg)?;

    let output = match resume {
        None => train_dataset(&dataset, &cfg.train)?,
        Some(dir) => {
            let ckpt = dir.join(CHECKPOINT_FILE);
            if !ckpt.exists() {
                return Err(Error::Config(format!(
                    "resume directory has no {}: {}",
                    CHECKPOINT_FILE,
                    dir.display()
                )));
            }
            let model = TwoStreamModel::load(&ckpt)?;
            let start_epoch = resume_epoch(dir)?;
            let videos = dataset.load_videos(Split::Train)?;
            train_from(model, &videos, &cfg.train, start_epoch)?
        }
    };

    let ckpt_path = cfg.out_dir.join(CHECKPOINT_FILE);
    output.model.save(&ckpt_path)?;
    let log_path = cfg.out_dir.join(TRAIN_LOG_FILE);
    let appending = resume.is_some_and(|dir| dir == cfg.out_dir);
    write_train_log(&log_path, &output.logs, appending)?;

    write_record(
        cfg,
        "train",
        json!({
            "resumed_from": resume,
            "epochs_run": output.logs.len() / 2,
            "next_epoch": output.next_epoch,
            "checkpoint": ckpt_path,
            "log": log_path,
            "elapsed_secs": elapsed_secs(started),
        }),
    )?;

    match output.logs.last() {
        Some(last) => println!(
            "trained through epoch {} ({} rows logged), final {} total loss {:.4}",
            last.epoch,
            output.logs.len(),
            last.stream,
            last.total
        ),
        None => println!("nothing to train: configured epochs already complete"),
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

pub fn localize(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
    if !ckpt_path.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} does not exist (train first or pass --checkpoint)",
            ckpt_path.display()
        )));
    }
    let dataset = Dataset::load(cfg.dataset_path()?)?;
    ensure_out_dir(cfg)?;

    let model = TwoStreamModel::load(&ckpt_path)?;
    let videos = dataset.load_videos(Split::Test)?;
    let detections = localize_videos(&model, &videos, &cfg.inference)?;
    let out_path = cfg.out_dir.join("detections.csv");
    write_detections(&out_path, &detections, &dataset.manifest.class_names)?;

    write_record(
        cfg,
        "localize",
        json!({
            "checkpoint": ckpt_path,
            "videos": videos.len(),
            "detections": detections.len(),
            "output": out_path,
            "elapsed_secs": elapsed_secs(started),
        }),
    )?;

    println!(
        "{} detections across {} test videos",
        detections.len(),
        videos.len()
    );
    println!("detections: {}", out_path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, detections: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let det_path = detections
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("detections.csv"));
    if !det_path.exists() {
        return Err(Error::Config(format!(
            "detections file {} does not exist (localize first or pass --detections)",
            det_path.display()
        )));
    }
    let dataset = Dataset::load(cfg.dataset_path()?)?;
    ensure_out_dir(cfg)?;

    let class_names = &dataset.manifest.class_names;
    let dets = read_detections(&det_path, class_names)?;
    let gts = collect_gt(&dataset.manifest, Split::Test);
    let report = map_report(
        &dets,
        &gts,
        class_names,
        &cfg.eval.thresholds,
        cfg.eval.avg_range,
    )?;
    let out_path = cfg.out_dir.join("eval.csv");
    write_report(&out_path, &report)?;

    write_record(
        cfg,
        "eval",
        json!({
            "detections": det_path,
            "ground_truth_instances": gts.len(),
            "average_map": report.average_map,
            "output": out_path,
            "elapsed_secs": elapsed_secs(started),
        }),
    )?;

    for (i, &t) in report.thresholds.iter().enumerate() {
        println!("mAP@{t:.2}: {:.4}", report.map[i]);
    }
    println!(
        "average mAP {:.2}:{:.2}: {:.4}",
        report.avg_range.0, report.avg_range.1, report.average_map
    );
    println!("report: {}", out_path.display());
    Ok(())
}

/// Accepts ids with or without the trailing `#` (`5` or `5#`).
pub fn parse_variants(raw: &[String]) -> Result<Vec<usize>> {
    raw.iter()
        .map(|s| {
            s.trim()
                .trim_end_matches('#')
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("unparseable variant id {s:?}")))
        })
        .collect()
}

pub fn ablate(cfg: &RunConfig, variants: Option<&[String]>) -> Result<()> {
    let started = Instant::now();
    let ids = match variants {
        Some(raw) => parse_variants(raw)?,
        None => (0..=5).collect(),
    };
    let dataset = Dataset::load(cfg.dataset_path()?)?;
    ensure_out_dir(cfg)?;

    let corpus = ExperimentCorpus::from_dataset(&dataset)?;
    let table = run_ablation(
        &corpus,
        &cfg.train,
        &cfg.inference,
        &ids,
        &cfg.eval.thresholds,
        cfg.eval.avg_range,
    )?;
    let out_path = cfg.out_dir.join("ablation.csv");
    write_ablation_csv(&out_path, &table)?;

    write_record(
        cfg,
        "ablate",
        json!({
            "variants": ids,
            "output": out_path,
            "elapsed_secs": elapsed_secs(started),
        }),
    )?;

    for row in &table.rows {
        match row.gain_vs_baseline {
            Some(gain) => println!(
                "{}  avg mAP {:.4}  ({}{:.4} vs 0#)",
                row.label,
                row.average_map,
                if gain >= 0.0 { "+" } else { "" },
                gain
            ),
            None => println!("{}  avg mAP {:.4}", row.label, row.average_map),
        }
    }
    println!("table: {}", out_path.display());
    Ok(())
}

pub fn sweep(cfg: &RunConfig, alphas: Option<&[f64]>, betas: Option<&[f64]>) -> Result<()> {
    let started = Instant::now();
    let alphas = alphas.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.1, 0.2, 0.3, 0.4]);
    let betas = betas.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.4, 0.5, 0.6]);
    let dataset = Dataset::load(cfg.dataset_path()?)?;
    ensure_out_dir(cfg)?;

    let corpus = ExperimentCorpus::from_dataset(&dataset)?;
    let table = run_sweep(
        &corpus,
        &cfg.train,
        &cfg.inference,
        &alphas,
        &betas,
        &cfg.eval.thresholds,
        cfg.eval.avg_range,
    )?;
    let out_path = cfg.out_dir.join("sweep.csv");
    write_sweep_csv(&out_path, &table)?;

    write_record(
        cfg,
        "sweep",
        json!({
            "alphas": alphas,
            "betas": betas,
            "full_model_spread": table.full_model_spread(),
            "baseline_spread": table.baseline_spread(),
            "output": out_path,
            "elapsed_secs": elapsed_secs(started),
        }),
    )?;

    for row in &table.rows {
        match row.alpha {
            Some(a) => println!(
                "alpha {a:.2}  beta {:.2}  avg mAP {:.4}",
                row.beta, row.average_map
            ),
            None => println!(
                "base-only  beta {:.2}  avg mAP {:.4}",
                row.beta, row.average_map
            ),
        }
    }
    if let (Some(full), Some(base)) = (table.full_model_spread(), table.baseline_spread()) {
        println!("spread: full model {full:.4} vs base-only {base:.4}");
    }
    println!("table: {}", out_path.display());
    Ok(())
}

/// Exit code 0 when every check passes, 4 otherwise.
pub fn selftest() -> u8 {
    let results = selftest::run_all();
    let mut failures = 0usize;
    for check in &results {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<34} {}", check.name, check.detail);
        if !check.passed {
            failures += 1;
        }
    }
    println!("self-test: {} checks, {failures} failed", results.len());
    if failures == 0 {
        0
    } else {
        4
    }
}
