//! Ablation and sensitivity harnesses: train the needed model variants,
//! localize the test split, and tabulate average mAP per configuration.

use std::path::Path;

use crate::data::{Dataset, LoadedVideo, Split};
use crate::error::{Error, Result};
use crate::evaluation::{collect_gt, map_report, GtInstance};
use crate::localization::{localize_videos, InferenceConfig};
use crate::model::TwoStreamModel;
use crate::training::{train, TrainConfig};

/// One ablation row: which proposal sources, scorer, and architecture are
/// active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub id: usize,
    /// Proposals from thresholded fused attention.
    pub attention_proposals: bool,
    /// Proposals from the clamped action-row sum of the subspace scores.
    pub score_proposals: bool,
    /// Contrastive scoring on subspace scores instead of base scores.
    pub subspace_scoring: bool,
    /// Temporal residual enhancement in the checkpoint.
    pub residual_enhancement: bool,
}

/// The standard six-row ablation grid, from the attention-only baseline
/// (row 0) to the full model (row 5).
pub const ABLATION_VARIANTS: [AblationVariant; 6] = [
    AblationVariant { id: 0, attention_proposals: true, score_proposals: false, subspace_scoring: false, residual_enhancement: false },
    AblationVariant { id: 1, attention_proposals: true, score_proposals: false, subspace_scoring: true, residual_enhancement: false },
    AblationVariant { id: 2, attention_proposals: false, score_proposals: true, subspace_scoring: false, residual_enhancement: false },
    AblationVariant { id: 3, attention_proposals: false, score_proposals: true, subspace_scoring: true, residual_enhancement: false },
    AblationVariant { id: 4, attention_proposals: false, score_proposals: true, subspace_scoring: true, residual_enhancement: true },
    AblationVariant { id: 5, attention_proposals: true, score_proposals: true, subspace_scoring: true, residual_enhancement: true },
];

pub fn ablation_variant(id: usize) -> Result<AblationVariant> {
    ABLATION_VARIANTS
        .get(id)
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown ablation variant {id}# (valid: 0..=5)")))
}

impl AblationVariant {
    pub fn label(&self) -> String {
        format!("{}#", self.id)
    }

    /// Inference settings for this variant, inheriting thresholds and the
    /// fusion weight from `base`.
    pub fn inference_config(&self, base: &InferenceConfig) -> InferenceConfig {
        InferenceConfig {
            proposals_from_attention: self.attention_proposals,
            proposals_from_scores: self.score_proposals,
            score_with_subspace: self.subspace_scoring,
            ..base.clone()
        }
    }
}

/// Everything an experiment needs in memory.
pub struct ExperimentCorpus {
    pub train: Vec<LoadedVideo>,
    pub test: Vec<LoadedVideo>,
    pub gt: Vec<GtInstance>,
    pub class_names: Vec<String>,
}

impl ExperimentCorpus {
    pub fn from_generated(corpus: &crate::synthetic::GeneratedCorpus) -> Self {
        ExperimentCorpus {
            train: corpus.loaded_videos(Split::Train),
            test: corpus.loaded_videos(Split::Test),
            gt: collect_gt(&corpus.manifest, Split::Test),
            class_names: corpus.manifest.class_names.clone(),
        }
    }

    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        Ok(ExperimentCorpus {
            train: dataset.load_videos(Split::Train)?,
            test: dataset.load_videos(Split::Test)?,
            gt: collect_gt(&dataset.manifest, Split::Test),
            class_names: dataset.manifest.class_names.clone(),
        })
    }

    fn num_actions(&self) -> usize {
        self.class_names.len()
    }
}

/// Trains at most two models (with and without the residual block) and
/// hands out references by variant.
struct ModelCache {
    plain: Option<TwoStreamModel>,
    enhanced: Option<TwoStreamModel>,
}

impl ModelCache {
    fn new() -> Self {
        ModelCache { plain: None, enhanced: None }
    }

    fn get(
        &mut self,
        residual: bool,
        corpus: &ExperimentCorpus,
        cfg: &TrainConfig,
    ) -> Result<&TwoStreamModel> {
        let slot = if residual { &mut self.enhanced } else { &mut self.plain };
        if slot.is_none() {
            let train_cfg = TrainConfig { use_tresm: residual, ..cfg.clone() };
            *slot = Some(train(&corpus.train, corpus.num_actions(), &train_cfg)?.model);
        }
        Ok(slot.as_ref().unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: usize,
    pub label: String,
    /// mAP at each requested IoU threshold.
    pub per_threshold_map: Vec<f64>,
    pub average_map: f64,
    /// Difference to the variant-0 row, when that row is part of the run.
    pub gain_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub thresholds: Vec<f64>,
    pub avg_range: (f64, f64),
    pub rows: Vec<AblationRow>,
}

/// Train the needed checkpoints and evaluate every requested variant.
pub fn run_ablation(
    corpus: &ExperimentCorpus,
    train_cfg: &TrainConfig,
    infer_cfg: &InferenceConfig,
    variant_ids: &[usize],
    thresholds: &[f64],
    avg_range: (f64, f64),
) -> Result<AblationTable> {
    if variant_ids.is_empty() {
        return Err(Error::Config("no ablation variants requested".to_string()));
    }
    let variants: Vec<AblationVariant> = variant_ids
        .iter()
        .map(|&id| ablation_variant(id))
        .collect::<Result<_>>()?;

    let mut cache = ModelCache::new();
    let mut rows = Vec::with_capacity(variants.len());
    for variant in &variants {
        let model = cache.get(variant.residual_enhancement, corpus, train_cfg)?;
        let cfg = variant.inference_config(infer_cfg);
        let detections = localize_videos(model, &corpus.test, &cfg)?;
        let report = map_report(
            &detections,
            &corpus.gt,
            &corpus.class_names,
            thresholds,
            avg_range,
        )?;
        rows.push(AblationRow {
            variant: variant.id,
            label: variant.label(),
            per_threshold_map: report.map.clone(),
            average_map: report.average_map,
            gain_vs_baseline: None,
        });
    }
    if let Some(baseline) = rows.iter().find(|r| r.variant == 0).map(|r| r.average_map) {
        for row in &mut rows {
            if row.variant != 0 {
                row.gain_vs_baseline = Some(row.average_map - baseline);
            }
        }
    }
    Ok(AblationTable {
        thresholds: thresholds.to_vec(),
        avg_range,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Partition band half-width used in training; `None` for the
    /// attention-only reference rows, which do not depend on it.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub per_threshold_map: Vec<f64>,
    pub average_map: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub thresholds: Vec<f64>,
    pub avg_range: (f64, f64),
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn spread(values: impl Iterator<Item = f64>) -> Option<f64> {
        let vals: Vec<f64> = values.collect();
        if vals.is_empty() {
            return None;
        }
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    /// max − min of average mAP over the full-model grid rows.
    pub fn full_model_spread(&self) -> Option<f64> {
        Self::spread(self.rows.iter().filter(|r| r.alpha.is_some()).map(|r| r.average_map))
    }

    /// max − min of average mAP over the attention-only reference rows.
    pub fn baseline_spread(&self) -> Option<f64> {
        Self::spread(self.rows.iter().filter(|r| r.alpha.is_none()).map(|r| r.average_map))
    }
}

/// Sensitivity sweep: attention-only reference rows across `betas`, then
/// the full model across `alphas` × `betas`. Each alpha requires its own
/// training run; beta only changes inference.
pub fn run_sweep(
    corpus: &ExperimentCorpus,
    train_cfg: &TrainConfig,
    infer_cfg: &InferenceConfig,
    alphas: &[f64],
    betas: &[f64],
    thresholds: &[f64],
    avg_range: (f64, f64),
) -> Result<SweepTable> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Config("sweep needs at least one alpha and one beta".to_string()));
    }
    let mut rows = Vec::new();

    let baseline_variant = ablation_variant(0)?;
    let full_variant = ablation_variant(5)?;

    // reference rows: base module only, independent of alpha
    let base_model = train(
        &corpus.train,
        corpus.num_actions(),
        &TrainConfig { use_tresm: false, ..train_cfg.clone() },
    )?
    .model;
    for &beta in betas {
        let cfg = InferenceConfig { beta, ..baseline_variant.inference_config(infer_cfg) };
        cfg.validate()?;
        let detections = localize_videos(&base_model, &corpus.test, &cfg)?;
        let report = map_report(&detections, &corpus.gt, &corpus.class_names, thresholds, avg_range)?;
        rows.push(SweepRow {
            alpha: None,
            beta,
            per_threshold_map: report.map.clone(),
            average_map: report.average_map,
        });
    }

    for &alpha in alphas {
        let cfg_train = TrainConfig { alpha, use_tresm: true, ..train_cfg.clone() };
        let model = train(&corpus.train, corpus.num_actions(), &cfg_train)?.model;
        for &beta in betas {
            let cfg = InferenceConfig { beta, ..full_variant.inference_config(infer_cfg) };
            cfg.validate()?;
            let detections = localize_videos(&model, &corpus.test, &cfg)?;
            let report =
                map_report(&detections, &corpus.gt, &corpus.class_names, thresholds, avg_range)?;
            rows.push(SweepRow {
                alpha: Some(alpha),
                beta,
                per_threshold_map: report.map.clone(),
                average_map: report.average_map,
            });
        }
    }
    Ok(SweepTable {
        thresholds: thresholds.to_vec(),
        avg_range,
        rows,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Ablation table CSV: flags, per-threshold mAP, average, gain.
pub fn write_ablation_csv(path: &Path, table: &AblationTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec![
        "variant".to_string(),
        "attention_proposals".to_string(),
        "score_proposals".to_string(),
        "subspace_scoring".to_string(),
        "residual_enhancement".to_string(),
    ];
    header.extend(table.thresholds.iter().map(|t| format!("map@{t:.2}")));
    header.push(format!("avg@{:.2}:{:.2}", table.avg_range.0, table.avg_range.1));
    header.push("gain".to_string());
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for row in &table.rows {
        let v = ablation_variant(row.variant)?;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        let mut record = vec![
            row.label.clone(),
            flag(v.attention_proposals),
            flag(v.score_proposals),
            flag(v.subspace_scoring),
            flag(v.residual_enhancement),
        ];
        record.extend(row.per_threshold_map.iter().map(|&m| fmt(m)));
        record.push(fmt(row.average_map));
        record.push(row.gain_vs_baseline.map_or(String::from("-"), fmt));
        w.write_record(&record).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Sweep table CSV: alpha (empty for reference rows), beta, per-threshold
/// mAP, average.
pub fn write_sweep_csv(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["alpha".to_string(), "beta".to_string()];
    header.extend(table.thresholds.iter().map(|t| format!("map@{t:.2}")));
    header.push(format!("avg@{:.2}:{:.2}", table.avg_range.0, table.avg_range.1));
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for row in &table.rows {
        let mut record = vec![
            row.alpha.map_or(String::from("-"), |a| format!("{a}")),
            format!("{}", row.beta),
        ];
        record.extend(row.per_threshold_map.iter().map(|&m| fmt(m)));
        record.push(fmt(row.average_map));
        w.write_record(&record).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_table_matches_the_standard_grid() {
        assert_eq!(ABLATION_VARIANTS.len(), 6);
        for (i, v) in ABLATION_VARIANTS.iter().enumerate() {
            assert_eq!(v.id, i);
            // at least one proposal source everywhere
            assert!(v.attention_proposals || v.score_proposals);
        }
        let v0 = ablation_variant(0).unwrap();
        assert!(v0.attention_proposals && !v0.score_proposals && !v0.subspace_scoring);
        assert!(!v0.residual_enhancement);
        let v3 = ablation_variant(3).unwrap();
        assert!(!v3.attention_proposals && v3.score_proposals && v3.subspace_scoring);
        assert!(!v3.residual_enhancement);
        let v5 = ablation_variant(5).unwrap();
        assert!(v5.attention_proposals && v5.score_proposals && v5.subspace_scoring);
        assert!(v5.residual_enhancement);
        assert!(ablation_variant(6).is_err());
    }

    #[test]
    fn variant_config_inherits_thresholds() {
        let base = InferenceConfig { beta: 0.4, nms_iou: 0.6, ..InferenceConfig::default() };
        let cfg = ablation_variant(3).unwrap().inference_config(&base);
        assert_eq!(cfg.beta, 0.4);
        assert_eq!(cfg.nms_iou, 0.6);
        assert!(!cfg.proposals_from_attention);
        assert!(cfg.proposals_from_scores);
        assert!(cfg.score_with_subspace);
        assert!(cfg.validate().is_ok());
    }
}
