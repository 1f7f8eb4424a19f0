//! Command-line pipeline: dataset synthesis, training, dehazing, evaluation,
//! and density-map inspection.
//!
//! Every subcommand is deterministic given `--seed` (falling back to the
//! `HZF_SEED` environment variable, then 0) and prints its fully resolved
//! configuration to stderr. Exit codes: 0 success, 2 usage error, 1 runtime
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hazeflow",
    version,
    about = "Physics-grounded haze synthesis and one-step ODE dehazing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a paired hazy/clean dataset with a manifest.
    GenHaze(GenHazeArgs),
    /// Train a stage: pretrain, reflow, or distill.
    Train(TrainArgs),
    /// Dehaze images with a checkpoint or the manifest oracle.
    Dehaze(DehazeArgs),
    /// Score a manifest: PSNR/SSIM and the haze-density proxy.
    Eval(EvalArgs),
    /// Generate a non-homogeneous density map and a preview.
    Density(DensityArgs),
}

#[derive(clap::Args)]
pub struct GenHazeArgs {
    /// Directory of clean source images (png or hzf).
    #[arg(long)]
    clean_dir: PathBuf,
    /// Output directory for rasters and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Depth source: ramp | radial | fractal | a directory of depth maps.
    #[arg(long)]
    depth: Option<String>,
    /// Number of samples (default: one per clean image).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the degradation pipeline (gamma, noise, block quantization).
    #[arg(long)]
    no_degrade: bool,
    /// Overwrite an existing manifest.
    #[arg(long)]
    force: bool,
    /// Maximum synthetic depth.
    #[arg(long)]
    d_max: Option<f32>,
    /// JSON config file whose keys mirror the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// pretrain | reflow | distill
    #[arg(long)]
    stage: hazeflow_flow::Stage,
    /// Dataset manifest (required for pretrain; supplies hazy images
    /// otherwise unless --hazy-dir is given).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory of hazy images for reflow/distill.
    #[arg(long)]
    hazy_dir: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Teacher checkpoint (required for reflow and distill).
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    /// Weight of the transmission refinement loss.
    #[arg(long)]
    w_t: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Distillation rounds (teacher is replaced by the student in between).
    #[arg(long)]
    rounds: Option<usize>,
    /// Loss log CSV path (default: checkpoint path with .csv).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct DehazeArgs {
    /// Input image file or directory (png or hzf). Optional in oracle mode,
    /// where inputs come from the manifest.
    #[arg(long, value_name = "PATH")]
    r#in: Option<PathBuf>,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest driving the exact oracle velocity (verification mode).
    #[arg(long)]
    oracle_manifest: Option<PathBuf>,
    /// Euler steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the refined transmission as <stem>_t.hzf.
    #[arg(long)]
    dump_t: bool,
    /// Hold the first velocity instead of re-evaluating each step.
    #[arg(long)]
    frozen_velocity: bool,
    /// Parallel workers for directory inputs.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate the exact oracle instead of a checkpoint.
    #[arg(long)]
    oracle: bool,
    /// Output directory for report.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct DensityArgs {
    /// Grid size as HxW, e.g. 256x256.
    #[arg(long)]
    size: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Walk length factor (4, 5, or 6 times the pixel count).
    #[arg(long)]
    n_factor: Option<usize>,
    /// Gaussian smoothing sigma (15, 25, or 35).
    #[arg(long)]
    sigma: Option<f32>,
    /// Output stem: writes <stem>.hzf and <stem>.png.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Usage errors exit with 2 (matching clap), runtime failures with 1.
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenHaze(args) => commands::gen_haze::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Dehaze(args) => commands::dehaze::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Density(args) => commands::density::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
