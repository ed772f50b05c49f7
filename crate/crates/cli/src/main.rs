//! `acs` — the command-line driver.
//!
//! Subcommands cover the full experiment cycle: `synth` a corpus, `train` a
//! model, `localize` actions on the test split, `eval` the detections, and
//! `ablate`/`sweep` for the component and sensitivity tables. `selftest`
//! runs the numeric oracle battery and gradient checks.
//!
//! Exit codes: 0 success, 2 invalid configuration or input values, 3 file
//! errors, 4 self-test failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acs_core::Error;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "acs",
    version,
    about = "Weakly-supervised temporal action localization with separated action/context subspaces"
)]
struct Cli {
    /// JSON run configuration; omitted fields take documented defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed override; corpus generation and training both derive
    /// their randomness streams from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Dataset manifest override.
    #[arg(long, global = true, value_name = "FILE")]
    dataset: Option<PathBuf>,

    /// Override for the partition band half-width used in training.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Override for the appearance/motion fusion weight used at inference.
    #[arg(long, global = true)]
    beta: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-stream corpus.
    Synth,
    /// Train a model on the dataset's train split.
    Train {
        /// Previous run directory to continue from; epoch numbering
        /// carries on where that run stopped.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
    },
    /// Emit detections for the dataset's test split.
    Localize {
        /// Checkpoint to load; defaults to <out-dir>/checkpoint.ckpt.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Score a detections file against the dataset's ground truth.
    Eval {
        /// Detections CSV; defaults to <out-dir>/detections.csv.
        #[arg(long, value_name = "FILE")]
        detections: Option<PathBuf>,
    },
    /// Compare the component-toggle variants 0#..5# on one corpus.
    Ablate {
        /// Comma-separated variant ids (e.g. "0,3,5"); default all six.
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        variants: Option<Vec<String>>,
    },
    /// Sensitivity sweep over training alphas and fusion betas.
    Sweep {
        /// Comma-separated alpha grid; default 0.1,0.2,0.3,0.4.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        alphas: Option<Vec<f64>>,
        /// Comma-separated beta grid; default 0.4,0.5,0.6.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        betas: Option<Vec<f64>>,
    },
    /// Run the numeric self-test battery (oracles + gradient checks).
    Selftest,
}

fn merged_config(cli: &Cli) -> acs_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(dataset) = &cli.dataset {
        cfg.dataset = Some(dataset.clone());
    }
    if let Some(out_dir) = &cli.out_dir {
        cfg.out_dir = out_dir.clone();
    }
    if let Some(alpha) = cli.alpha {
        cfg.train.alpha = alpha;
    }
    if let Some(beta) = cli.beta {
        cfg.inference.beta = beta;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> acs_core::Result<u8> {
    if matches!(cli.command, Command::Selftest) {
        return Ok(commands::selftest());
    }
    let cfg = merged_config(cli)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg)?,
        Command::Train { resume } => commands::train(&cfg, resume.as_deref())?,
        Command::Localize { checkpoint } => commands::localize(&cfg, checkpoint.as_deref())?,
        Command::Eval { detections } => commands::eval(&cfg, detections.as_deref())?,
        Command::Ablate { variants } => commands::ablate(&cfg, variants.as_deref())?,
        Command::Sweep { alphas, betas } => {
            commands::sweep(&cfg, alphas.as_deref(), betas.as_deref())?;
        }
        Command::Selftest => unreachable!("handled before config merging"),
    }
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Data(_) | Error::Shape { .. } => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
