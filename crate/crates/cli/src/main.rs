//! Command-line front end wiring the pipeline stages into reproducible runs:
//! voxelize point clouds, score oriented boxes, simulate scenarios, run the
//! tracker over detection streams, evaluate results and benchmark the box
//! metrics.
//!
//! Every file-producing run writes a [`manifest::RunManifest`] alongside its
//! outputs so the run can be replayed bit-exactly. Exit codes: 0 on success,
//! 1 on input or format errors, 2 on internal numerical errors.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Errors split by exit code: bad inputs (1) vs numerical failures (2).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Internal(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<srtrack_core::kitti::KittiError> for CliError {
    fn from(e: srtrack_core::kitti::KittiError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<srtrack_core::voxel::VoxelError> for CliError {
    fn from(e: srtrack_core::voxel::VoxelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<srtrack_core::sim::SimError> for CliError {
    fn from(e: srtrack_core::sim::SimError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<srtrack_core::metrics::EvalError> for CliError {
    fn from(e: srtrack_core::metrics::EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<srtrack_core::geometry::GeometryError> for CliError {
    fn from(e: srtrack_core::geometry::GeometryError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<srtrack_core::lmb::FilterError> for CliError {
    fn from(e: srtrack_core::lmb::FilterError) -> Self {
        use srtrack_core::lmb::FilterError;
        match e {
            FilterError::Conditioning(msg) => CliError::Internal(msg),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "srtrack",
    version,
    about = "3D multi-object tracking toolkit: box metrics, LMB tracking, voxelization, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a velodyne point cloud into a feature grid
    Voxelize(VoxelizeArgs),
    /// Score a pair of oriented boxes with the SRT score or the exact IoU
    Srts(SrtsArgs),
    /// Generate a synthetic scenario: ground truth plus noisy detections
    Simulate(SimulateArgs),
    /// Run the multi-target tracker over a detection stream
    Track(TrackArgs),
    /// Evaluate tracking or detection output against ground truth
    Eval(EvalArgs),
    /// Benchmark the SRT score against the exact rotated IoU
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Occupancy,
    Intensity,
    Semantic,
}

#[derive(clap::Args)]
pub struct VoxelizeArgs {
    /// Velodyne point-cloud binary (x, y, z, intensity as little-endian f32)
    #[arg(long)]
    pub cloud: PathBuf,
    /// KITTI calibration file
    #[arg(long)]
    pub calib: PathBuf,
    /// Semantic class-map image (PNG), required in semantic mode
    #[arg(long)]
    pub semantic: Option<PathBuf>,
    /// Cell feature to store
    #[arg(long, value_enum, default_value = "occupancy")]
    pub mode: ModeArg,
    /// Number of semantic classes encoded in the class map
    #[arg(long, default_value_t = 19)]
    pub num_classes: usize,
    /// Grid geometry as JSON (roi_min, roi_max, dims); defaults to the
    /// 768x1024x21 sensor grid
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Output voxel-grid file (svxl)
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to <out>.manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Srts,
    Iou,
}

#[derive(clap::Args)]
pub struct SrtsArgs {
    /// First box as x,y,z,l,w,h,yaw (reference side for the scale score)
    #[arg(long)]
    pub box_a: String,
    /// Second box as x,y,z,l,w,h,yaw
    #[arg(long)]
    pub box_b: String,
    /// Score parameters as JSON; missing fields take their defaults
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Which similarity to print
    #[arg(long, value_enum, default_value = "srts")]
    pub metric: MetricArg,
    /// Optional manifest path (stdout-only command, so off by default)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Scenario configuration as JSON; missing fields take their defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed override; wins over the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for truth.txt, detections.txt, calib.txt, config.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Manifest path; defaults to <out-dir>/manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct TrackArgs {
    /// Detection stream in KITTI tracking label format
    #[arg(long)]
    pub detections: PathBuf,
    /// Filter configuration as JSON; missing fields take their defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Calibration file used to lift labels into sensor coordinates;
    /// defaults to the canonical sensor calibration the simulator writes
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Frame period in seconds
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Process this many frames (pads empty trailing frames); defaults to
    /// the last frame present in the detections
    #[arg(long)]
    pub frames: Option<usize>,
    /// Output track stream in KITTI tracking label format
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to <out>.manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    Mot,
    Ap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatcherArg {
    Iou,
    Srts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlavorArg {
    Object,
    Tracking,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Tracking metrics (mot) or detection average precision (ap)
    #[arg(long, value_enum)]
    pub mode: EvalModeArg,
    /// Ground-truth label file
    #[arg(long)]
    pub gt: PathBuf,
    /// Hypothesis label file (tracks for mot, scored detections for ap)
    #[arg(long)]
    pub hyp: PathBuf,
    /// Box similarity used for matching
    #[arg(long, value_enum, default_value = "iou")]
    pub matcher: MatcherArg,
    /// Match threshold on the similarity
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// SRT score parameters as JSON (srts matcher only)
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Label flavor of both input files
    #[arg(long, value_enum, default_value = "tracking")]
    pub flavor: FlavorArg,
    /// Calibration file; defaults to the canonical sensor calibration
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Write the JSON report here instead of printing it
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the precision-recall curve as CSV (ap mode)
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Manifest path; defaults to <out>.manifest.json when --out is given
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct BenchArgs {
    /// Number of random box pairs to score
    #[arg(long, default_value_t = 1_000_000)]
    pub pairs: usize,
    /// Seed for the pair generator
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV with per-metric latency and the speedup ratio
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to <out>.manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    // die quietly when stdout closes early (e.g. piped into head) instead of
    // panicking on the broken pipe
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version land here too; only real parse errors exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Voxelize(args) => commands::voxelize(args),
        Command::Srts(args) => commands::srts(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Track(args) => commands::track(args),
        Command::Eval(args) => commands::eval(args),
        Command::Bench(args) => commands::bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
