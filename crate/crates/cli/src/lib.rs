//! `vinescan`: register visible/infrared UAV frame pairs, segment both
//! modalities, fuse them into disease maps and evaluate the result.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;
pub use config::{load_config, stage_seed, PipelineConfig};
pub use error::{CliError, ExitKind};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "vinescan", version, about = "Multimodal vineyard disease mapping")]
pub struct Cli {
    /// TOML configuration file (dotted keys allowed).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Where to write the run manifest.
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// More log output (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic visible/infrared pairs with ground truth.
    Synth(SynthArgs),
    /// Register an infrared frame onto a visible frame.
    Register(RegisterArgs),
    /// Segment a frame with a baseline model.
    Segment(SegmentArgs),
    /// Train the baseline per-pixel classifier.
    Train(TrainArgs),
    /// Fuse visible and infrared masks into a disease map.
    Fuse(FuseArgs),
    /// Compute leaf/grapevine metrics and registration statistics.
    Evaluate(EvaluateArgs),
    /// Cut augmented, labeled training patches from a frame.
    Augment(AugmentArgs),
    /// Register, segment, fuse and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Visible,
    Infrared,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub vis: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub out_warped: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
    /// Validity mask of the warped frame (white = covered).
    #[arg(long)]
    pub out_mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "visible")]
    pub modality: ModalityArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training image; pair each with a --labels mask.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub labels: Vec<PathBuf>,
    /// Add this many synthetic scenes of the chosen modality.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, value_enum, default_value = "visible")]
    pub modality: ModalityArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub vis_mask: PathBuf,
    /// Infrared mask already in the visible frame.
    #[arg(long)]
    pub ir_mask: PathBuf,
    /// Warp validity mask; black pixels fall back to the visible label.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Visible frame to draw the overlay on.
    #[arg(long, requires = "out_overlay")]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    pub out_overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted disease map; pair each with a --truth map.
    #[arg(long)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub truth: Vec<PathBuf>,
    /// Registration report JSON files to summarize.
    #[arg(long)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the tables as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Augmentation grid JSON (missing keys take defaults).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.85)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub vis: Option<PathBuf>,
    #[arg(long)]
    pub ir: Option<PathBuf>,
    /// Visible ground-truth mask.
    #[arg(long)]
    pub vis_truth: Option<PathBuf>,
    /// Infrared ground-truth mask in the infrared frame.
    #[arg(long)]
    pub ir_truth: Option<PathBuf>,
    #[arg(long)]
    pub vis_model: Option<PathBuf>,
    #[arg(long)]
    pub ir_model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
