//! `forgeloc` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or invalid argument, 2 data or I/O
//! problem, 3 numeric failure during training or inference.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forgeloc::Error;

#[derive(Parser, Debug)]
#[command(name = "forgeloc", version, about = "Face forgery detection and localization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic tamper dataset with manifest.
    Synth(SynthArgs),
    /// Derive ground-truth masks from forged/original image pairs.
    MakeMasks(MakeMasksArgs),
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Export activation-map heatmaps and binarized masks.
    Cam(CamArgs),
    /// Render input patterns that maximize individual channels.
    VizKernels(VizArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pristine/tampered pairs.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// ellipse-paste, blend-paste, warp-patch, or mixed (cycles all three).
    #[arg(long, default_value = "mixed")]
    pub mode: String,
}

#[derive(Args, Debug)]
pub struct MakeMasksArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// A pixel is forged when some channel differs by more than this.
    #[arg(long, default_value_t = 0)]
    pub delta: u8,
    /// Directory for mask PNGs [default: <manifest dir>/masks_computed].
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    /// Updated manifest [default: <manifest stem>.masks.jsonl beside the input].
    #[arg(long)]
    pub out_manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    /// cls or seg.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub crop: Option<u32>,
    /// Channel width multiplier [default: 0.25].
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate every N steps; 0 validates after the last step only.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Full-size preset: batch 64, crop 256, width 1.0; rejects images
    /// smaller than the crop.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// cls-direct, cls-cam, seg-direct, or seg-agg.
    #[arg(long)]
    pub mode: String,
    /// CAM binarization threshold on the min-max normalized map.
    #[arg(long, default_value_t = 0.5)]
    pub tau1: f64,
    /// Foreground fraction at which a predicted mask flags the image fake.
    #[arg(long, default_value_t = 0.5)]
    pub tau2: f64,
    #[arg(long, default_value_t = 64)]
    pub crop: u32,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Write report.csv and report.json here.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input PNG images.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// CAM binarization threshold on the min-max normalized map.
    #[arg(long, default_value_t = 0.5)]
    pub tau1: f64,
    /// Center-crop inputs to this size first.
    #[arg(long)]
    pub crop: Option<u32>,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer name, e.g. relu1.
    #[arg(long)]
    pub layer: String,
    /// Channels to render [default: all].
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Argument(_) | Error::State(_) => 1,
        Error::Dimension(_) | Error::Io { .. } | Error::Record { .. } | Error::Load(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
