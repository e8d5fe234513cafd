//! Command-line surface: `tile`, `synth`, `pretrain`, `eval`, `ablate` and
//! `plot`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod data;
mod manifest;
mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_ablate, cmd_eval, cmd_plot, cmd_pretrain, cmd_synth, cmd_tile};
pub use config::{
    AblationConfig, ConfigError, DataConfig, DataSource, EvalDataConfig, RunConfig, SyntheticData, PRESETS,
};
pub use data::{classification_task, load_tile_dir, pretrain_groups, segmentation_task};
pub use manifest::{file_digest, RunManifest, MANIFEST_FILE};
pub use plot::{plot_inputs, PlotInput};

use crate::contrastcore::Method;

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "AGRI_CONTRAST_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn usage(e: impl std::fmt::Display) -> CliError {
        CliError::Usage(e.to_string())
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "agri-contrast", version, about = "Contrastive pre-training for four-channel field imagery")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut full-field scenes into non-overlapping square tiles.
    Tile(TileArgs),
    /// Write a synthetic multi-flight corpus as scene directories.
    Synth(SynthArgs),
    /// Contrastive pre-training.
    Pretrain(PretrainArgs),
    /// Downstream evaluation of an encoder.
    Eval(EvalArgs),
    /// Flight-count ablation: pre-train on nested subsets, then probe.
    Ablate(AblateArgs),
    /// Render metric reports and ablation tables as SVG figures.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// A scene directory (scene.json plus rgb.png and nir.png, or
    /// scene.nrgb), or a directory whose subdirectories are scenes.
    #[arg(long)]
    pub input: PathBuf,
    /// Tile side in pixels.
    #[arg(long, default_value_t = 512, value_parser = parse_tile_size)]
    pub tile_size: usize,
    /// Output directory; tiles go to `rgb/` and `nir/` below it.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: `<out>/manifest.csv`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn parse_tile_size(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("tile size must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; one subdirectory per scene.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub fields: usize,
    #[arg(long, default_value_t = 3)]
    pub flights: usize,
    /// Scene side in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// TOML run configuration layered over its preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Pre-train on a random subset of this many revisit groups (tile
    /// data: this many flights).
    #[arg(long)]
    pub flights: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Cap on optimisation steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Stop after this many completed steps and write a resumable
    /// checkpoint.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Output directory (default: `<output_dir>/<method>-seed<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MethodArg {
    Moco,
    MocoPixpro,
    Temco,
    TemcoPixpro,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Moco => Method::Moco,
            MethodArg::MocoPixpro => Method::MocoPixpro,
            MethodArg::Temco => Method::Temco,
            MethodArg::TemcoPixpro => Method::TemcoPixpro,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Frozen encoder with a linear or MLP classifier.
    Probe,
    /// Classifier trained together with the encoder.
    Finetune,
    /// U-Net decoder for dense segmentation.
    Segment,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub mode: EvalMode,
    /// probe: linear | nonlinear_mlp; finetune: finetune;
    /// segment: coarse (cross-entropy) | fine_grained (focal loss).
    #[arg(long)]
    pub protocol: Option<String>,
    /// Fraction of labelled training samples to use.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Keep the encoder fixed (segmentation only; probing always freezes,
    /// fine-tuning never does).
    #[arg(long, overrides_with = "no_freeze")]
    pub freeze: bool,
    #[arg(long, overrides_with = "freeze")]
    pub no_freeze: bool,
    /// `random` or the path of a pre-training checkpoint or run directory.
    #[arg(long, default_value = "random")]
    pub weights: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Training epochs of the head or decoder.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory (default: `<output_dir>/eval-<mode>-seed<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn freeze_flag(&self) -> Option<bool> {
        if self.freeze {
            Some(true)
        } else if self.no_freeze {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Comma-separated subset sizes, in revisit groups.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Comma-separated label fractions.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metric report JSON files and ablation CSV tables. Each ablation
    /// table is drawn with its own line style.
    #[arg(required = false)]
    pub inputs: Vec<PathBuf>,
    /// Output SVG path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    let result = match &cli.command {
        Command::Tile(a) => cmd_tile(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
