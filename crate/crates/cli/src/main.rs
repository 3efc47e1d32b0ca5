//! `liftseg` command-line front end.
//!
//! Exit status: 0 on success, 1 on user error (arguments, input files,
//! configuration), 2 on internal error.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use liftseg::dataset::SensorId;
use liftseg::harness::BenchMode;
use liftseg::projection::Channel;

#[derive(Debug, Parser)]
#[command(name = "liftseg", version, about = "Dual-LiDAR range-image semantic segmentation")]
pub struct Cli {
    /// TOML configuration file; command flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Project a scan into spherical image planes.
    Project(ScanArgs),
    /// Estimate surface normals of a scan in the vehicle frame.
    Normals(ScanArgs),
    /// Render one image channel of a scan as PNG.
    Render(RenderArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Segment one front/down scan pair.
    Infer(InferArgs),
    /// Evaluate a model on the test sequence of a dataset.
    Eval(EvalArgs),
    /// Measure pipeline latency against the real-time budget.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset root.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the rig's image rows.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Override the rig's image columns.
    #[arg(long)]
    pub cols: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Point file (`.bin`).
    #[arg(long)]
    pub scan: PathBuf,
    /// Optional label file (`.label`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "front")]
    pub sensor: SensorId,
    /// Rig file; defaults to the config's rig.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Directory for PNGs and the statistics report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scan: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "front")]
    pub sensor: SensorId,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// range, reflectivity, labels, normals or valid.
    #[arg(long, default_value = "range")]
    pub channel: Channel,
    /// Render the model's prediction instead of the label file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root written by `synth` (or laid out the same way).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the model, checkpoints and loss curve.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed of the shuffle stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the weight initialization.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Zero the reflectivity input channel.
    #[arg(long)]
    pub no_reflectivity: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub front: PathBuf,
    #[arg(long)]
    pub down: PathBuf,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Output directory for label files and PNGs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the text table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model checkpoint; without one a model is built from the config.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Front scan; without scans a synthetic scene is generated.
    #[arg(long, requires = "down")]
    pub front: Option<PathBuf>,
    #[arg(long, requires = "front")]
    pub down: Option<PathBuf>,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// single, dual, or both when omitted.
    #[arg(long)]
    pub mode: Option<BenchMode>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
