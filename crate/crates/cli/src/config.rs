//! The merged run configuration: a JSON file plus command-line overrides.
//!
//! Every field has a documented default, so an empty file (or no file at
//! all) is a valid configuration. Unknown keys are rejected — a typo in an
//! experiment config should fail loudly, not silently fall back.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use acs_core::evaluation::{default_thresholds, DEFAULT_AVG_RANGE};
use acs_core::localization::InferenceConfig;
use acs_core::synthetic::SynthConfig;
use acs_core::training::TrainConfig;
use acs_core::{Error, Result};

/// Report layout: which IoU thresholds to column and which band of them to
/// average into the headline number.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub thresholds: Vec<f64>,
    /// Inclusive `[lo, hi]` threshold band of the headline average.
    pub avg_range: (f64, f64),
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            thresholds: default_thresholds(),
            avg_range: DEFAULT_AVG_RANGE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest consumed by train/localize/eval/ablate/sweep.
    pub dataset: Option<PathBuf>,
    /// Every artifact (corpus, checkpoint, CSVs, run records) lands here.
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out_dir: PathBuf::from("acs-out"),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Range checks on every value the commands will consume, run once at
    /// startup so a bad cell in a sweep cannot fail an hour in.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.inference.validate()?;
        if self.eval.thresholds.is_empty() {
            return Err(Error::Config("eval.thresholds must not be empty".to_string()));
        }
        for &t in &self.eval.thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!(
                    "eval threshold {t} outside (0, 1]"
                )));
            }
        }
        let (lo, hi) = self.eval.avg_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!(
                "eval.avg_range must be an ordered pair, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// The dataset manifest path, required to exist before a command runs.
    pub fn dataset_path(&self) -> Result<&Path> {
        let path = self.dataset.as_deref().ok_or_else(|| {
            Error::Config(
                "this command needs a dataset; set \"dataset\" in the config or pass --dataset"
                    .to_string(),
            )
        })?;
        if !path.exists() {
            return Err(Error::Config(format!(
                "dataset manifest {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }
}
