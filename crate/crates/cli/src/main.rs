//! Command-line driver wiring the event pipeline, trainer, and profiler:
//! `convert`, `synth`, `train`, `eval`, `profile`, and `gradcheck`.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cs3d", version, about = "Event-stream spatio-temporal classifier toolkit")]
pub struct Cli {
    /// Master seed for all randomness in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory that receives artifacts and the run manifest.
    #[arg(long, global = true, default_value = "cs3d-out")]
    pub out: PathBuf,

    /// Model config file (TOML); flags override individual fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Convert image frames to an event stream (and optionally a voxel dump).
    Convert(ConvertArgs),
    /// Generate a synthetic event dataset with a manifest.
    Synth(SynthArgs),
    /// Train a model on an event dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an event dataset manifest.
    Eval(EvalArgs),
    /// Analytic FLOPs/params report, optional trace-based energy.
    Profile(ProfileArgs),
    /// Finite-difference gradient verification across all modules.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Frames directory (png/jpg, sorted by name) or a frames CSV file.
    #[arg(long)]
    pub input: PathBuf,
    /// Log-intensity contrast threshold of the simulator.
    #[arg(long, default_value_t = 0.15)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1000)]
    pub frame_interval_us: u64,
    /// Crop box `top,left,height,width` (default: full frame).
    #[arg(long)]
    pub crop: Option<String>,
    /// Resize target `HxW` (default: crop size).
    #[arg(long)]
    pub target: Option<String>,
    /// Event file format.
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Also dump the voxelized tensor next to the events.
    #[arg(long, default_value_t = false)]
    pub dump_voxels: bool,
    #[arg(long, default_value_t = 16)]
    pub t_bins: usize,
    #[arg(long, default_value = "count")]
    pub policy: String,
}

#[derive(Args)]
pub struct SynthArgs {
    /// moving-bar-4dir or expanding-vs-contracting.
    #[arg(long, default_value = "moving-bar-4dir")]
    pub kind: String,
    #[arg(long, default_value_t = 50)]
    pub n_per_class: usize,
    /// Sensor geometry `WxH`.
    #[arg(long, default_value = "32x32")]
    pub geometry: String,
    #[arg(long, default_value_t = 16)]
    pub t_bins: usize,
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.15)]
    pub threshold: f64,
    /// Disable per-sample speed/position jitter.
    #[arg(long, default_value_t = false)]
    pub no_jitter: bool,
    /// Event file format (bin for bulk, csv for inspection).
    #[arg(long, default_value = "bin")]
    pub format: String,
}

#[derive(Args, Clone)]
pub struct ModelFlags {
    /// Base architecture when no config file is given.
    #[arg(long, default_value = "cs3d")]
    pub arch: String,
    /// Named comparison variant (c3d, c3d+ssn, c3d+factorized,
    /// c3d+attention, cs3d); overrides --arch.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// SSN threshold override.
    #[arg(long)]
    pub ssn_theta: Option<f64>,
    /// SSN surrogate steepness override.
    #[arg(long)]
    pub ssn_beta: Option<f64>,
    /// Swap the soft spiking neuron for the plain rectifier.
    #[arg(long, default_value_t = false)]
    pub no_ssn: bool,
    /// Swap factorized blocks for dense 3x3x3 convolutions.
    #[arg(long, default_value_t = false)]
    pub no_factorized: bool,
    #[arg(long, default_value_t = false)]
    pub no_temporal_attn: bool,
    #[arg(long, default_value_t = false)]
    pub no_spatial_attn: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest (path,label CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Sensor geometry `WxH` of the event files.
    #[arg(long, default_value = "32x32")]
    pub geometry: String,
    #[arg(long, default_value_t = 16)]
    pub t_bins: usize,
    #[arg(long, default_value = "count")]
    pub policy: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Held-out fraction for per-epoch evaluation.
    #[arg(long, default_value_t = 0.25)]
    pub holdout: f64,
    /// Stop once held-out accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "32x32")]
    pub geometry: String,
    #[arg(long, default_value_t = 16)]
    pub t_bins: usize,
    #[arg(long, default_value = "count")]
    pub policy: String,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args)]
pub struct ProfileArgs {
    /// Input shape `CxTxHxW`.
    #[arg(long, default_value = "2x16x112x112")]
    pub input_shape: String,
    /// Power trace CSV (`t_s,watts`) to integrate into the report.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output format on stdout.
    #[arg(long, default_value = "table")]
    pub format: String,
    /// Comma-separated variant list; emits a comparison CSV instead of a
    /// single report.
    #[arg(long)]
    pub compare: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

/// Failures carry the exit code contract: 2 for bad arguments, 1 for
/// runtime failures.
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<cs3d_core::CoreError> for Failure {
    fn from(e: cs3d_core::CoreError) -> Self {
        Failure::Runtime(anyhow::Error::new(e))
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Convert(args) => commands::convert(&cli, args),
        Command::Synth(args) => commands::synth(&cli, args),
        Command::Train(args) => commands::train(&cli, args),
        Command::Eval(args) => commands::eval(&cli, args),
        Command::Profile(args) => commands::profile(&cli, args),
        Command::Gradcheck(args) => commands::gradcheck(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}\nrun `cs3d --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
