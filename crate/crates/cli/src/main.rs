//! `movt`: generate synthetic data, train, evaluate, sweep, fuse, score
//! saliency, count compute and probe frozen features.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use movt_core::fusion::FusionSpace;
use movt_core::saliency::Attribution;
use movt_core::{Error, Result};
use serde_json::Value;

use commands::{Axis, EvalOptions, FuseOptions, SaliencyOptions, SweepOptions, Transform};
use config::{ExperimentConfig, ModelKind};

#[derive(Parser)]
#[command(name = "movt", version, about = "Point-track motion transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory with a manifest; synthesized in memory from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    /// Keep only the first N frames of every clip.
    #[arg(long)]
    crop: Option<usize>,
    /// Keep K randomly chosen tracks of every clip.
    #[arg(long)]
    tracks: Option<usize>,
}

impl From<&TransformArgs> for Transform {
    fn from(t: &TransformArgs) -> Self {
        Transform {
            crop: t.crop,
            tracks: t.tracks,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest plus PTRK files).
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long, value_enum, default_value = "movt")]
        model: ModelKind,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        transform: TransformArgs,
        /// Keep this fraction of the training set, stratified by class.
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: metrics JSON, per-class, coverage, logits and labels CSVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        transform: TransformArgs,
        /// Comma-separated confidence thresholds for the coverage curve.
        #[arg(long, value_delimiter = ',')]
        coverage_thresholds: Option<Vec<f64>>,
        /// Also write the fused test-set embeddings.
        #[arg(long)]
        export_embeddings: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain along one axis and tabulate accuracy per value.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_enum, value_delimiter = ',')]
        models: Option<Vec<ModelKind>>,
        /// Scale epochs by 1/fraction so every point takes the same number of optimizer steps.
        #[arg(long)]
        equal_steps: bool,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Late-fuse two logits tables and compare top-1 accuracies.
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// CSV with header `id,label`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = movt_core::fusion::DEFAULT_WEIGHT)]
        weight: f64,
        #[arg(long, value_enum, default_value = "logits")]
        space: SpaceArg,
        #[arg(long)]
        gflops_a: Option<f64>,
        #[arg(long)]
        gflops_b: Option<f64>,
        /// Write the fused logits table here.
        #[arg(long)]
        fused: Option<PathBuf>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-track gradient importance on the test split.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, value_enum)]
        attribution: Option<AttributionArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter count, GFLOPs and the per-layer ledger of a model config.
    Flops {
        #[arg(long, value_enum, default_value = "movt")]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        tracks: usize,
        #[arg(long, default_value_t = 32)]
        frames: usize,
    },
    /// Linear probe on frozen embeddings of a source checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SpaceArg {
    Logits,
    Probabilities,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AttributionArg {
    Gradient,
    GradientTimesInput,
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Gen { config, out } => commands::gen(&ExperimentConfig::load(config.as_deref())?, &out),
        Command::Train {
            model,
            common,
            transform,
            fraction,
            out,
        } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let split = commands::load_split(common.data.as_deref(), &cfg)?;
            commands::train_run(&cfg, model, &split, fraction, (&transform).into(), &out)
        }
        Command::Eval {
            checkpoint,
            common,
            transform,
            coverage_thresholds,
            export_embeddings,
            out,
        } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let split = commands::load_split(common.data.as_deref(), &cfg)?;
            let opts = EvalOptions {
                thresholds: coverage_thresholds.unwrap_or_else(|| cfg.eval.coverage_thresholds.clone()),
                export_embeddings,
                transform: (&transform).into(),
            };
            commands::eval(&cfg, &checkpoint, &split, &opts, &out)
        }
        Command::Sweep {
            axis,
            values,
            models,
            equal_steps,
            common,
            out,
        } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let split = commands::load_split(common.data.as_deref(), &cfg)?;
            let opts = SweepOptions {
                axis,
                values,
                models,
                equal_steps,
            };
            commands::sweep(&cfg, &split, &opts, &out)
        }
        Command::Fuse {
            a,
            b,
            labels,
            weight,
            space,
            gflops_a,
            gflops_b,
            fused,
            out,
        } => {
            let opts = FuseOptions {
                a,
                b,
                labels,
                weight,
                space: match space {
                    SpaceArg::Logits => FusionSpace::Logits,
                    SpaceArg::Probabilities => FusionSpace::Probabilities,
                },
                gflops_a,
                gflops_b,
                fused,
            };
            let doc = commands::fuse(&opts)?;
            if let Some(path) = out {
                std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
            }
            Ok(doc)
        }
        Command::Saliency {
            checkpoint,
            common,
            fraction,
            bins,
            attribution,
            out,
        } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let opts = SaliencyOptions {
                fraction: fraction.unwrap_or(cfg.eval.saliency_fraction),
                bins: bins.unwrap_or(cfg.eval.histogram_bins),
                attribution: match attribution {
                    Some(AttributionArg::Gradient) => Attribution::Gradient,
                    Some(AttributionArg::GradientTimesInput) => Attribution::GradientTimesInput,
                    None => cfg.eval.attribution,
                },
            };
            if !(opts.fraction > 0.0 && opts.fraction <= 1.0) || opts.bins == 0 {
                return Err(Error::Config("fraction must lie in (0, 1] and bins be at least 1".into()));
            }
            let split = commands::load_split(common.data.as_deref(), &cfg)?;
            commands::saliency(&cfg, &checkpoint, &split, &opts, &out)
        }
        Command::Flops {
            model,
            config,
            tracks,
            frames,
        } => commands::flops(&ExperimentConfig::load(config.as_deref())?, model, tracks, frames),
        Command::Probe { checkpoint, common, out } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let split = commands::load_split(common.data.as_deref(), &cfg)?;
            commands::probe(&cfg, &checkpoint, &split, &out)
        }
    }
}

/// 2 config, 3 data or I/O, 4 numeric fault.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NumericFault(_) | Error::UndefinedCorrelation(_) | Error::MissingContext(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(doc) => {
            let text = serde_json::to_string_pretty(&doc).expect("report serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
