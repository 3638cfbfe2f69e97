//! Command-line front end: argument parsing, dispatch and the exit-code
//! contract (0 success, 1 operational failure, 2 usage error).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "densescan", version, about = "Dense sliding-window detection with a small convolutional network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan an image pyramid and write detections as JSON lines.
    Detect(DetectArgs),
    /// Match detections against ground truth and report precision/recall.
    Eval(EvalArgs),
    /// Train a network on labelled images.
    Train(TrainArgs),
    /// Dump positive and negative training patches.
    Sample(SampleArgs),
    /// Histogram head-pose annotations.
    AnalyzePoses(PoseArgs),
    /// Print a model's layers and scan geometry.
    ModelInfo(ModelInfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NmsChoice {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtChoice {
    Rect,
    Fddb,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Model prefix (`name`, `name.manifest` or `name.weights`).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Image id written into each record; defaults to the file stem.
    #[arg(long)]
    pub image_id: Option<String>,
    /// Ratio between consecutive pyramid levels.
    #[arg(long, default_value_t = 0.793701)]
    pub fs: f64,
    /// Scale of the first pyramid level.
    #[arg(long, default_value_t = 5.0)]
    pub upscale: f64,
    #[arg(long, value_enum, default_value_t = NmsChoice::Avg)]
    pub nms: NmsChoice,
    /// Overlap threshold; 0.2 for avg and 0.3 for max when omitted.
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub score_floor: f64,
    /// Box regressor prefix.
    #[arg(long)]
    pub regressor: Option<PathBuf>,
    /// Detections file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Image with boxes and scores drawn on it (png, ppm).
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Directory receiving one grayscale heat map per pyramid level.
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = GtChoice::Rect)]
    pub format: GtChoice,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Precision/recall curve as CSV.
    #[arg(long)]
    pub pr_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `random` for a freshly initialised MiniNet, otherwise a model prefix.
    #[arg(long, default_value = "random")]
    pub init: String,
    /// Directory of pgm, ppm or png images.
    #[arg(long)]
    pub images: PathBuf,
    /// Rectangle annotations `image-id x y w h`, ids being file stems.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model prefix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.25)]
    pub positive_fraction: f64,
    /// Per-iteration batch risk as CSV.
    #[arg(long)]
    pub risk_out: Option<PathBuf>,
    /// Also fit a box regressor on the training images and save it here.
    #[arg(long)]
    pub regressor_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory; receives `positive/` and `negative/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 35)]
    pub window: usize,
    #[arg(long, default_value_t = 20)]
    pub positives_per_image: usize,
    #[arg(long, default_value_t = 60)]
    pub negatives_per_image: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Lines `id roll pitch yaw` in degrees.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    pub bin_width: f64,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelInfoArgs {
    /// Model prefix; only the manifest is read.
    #[arg(long)]
    pub model: PathBuf,
}

/// Stable kind of an operational error, taken from the library error when
/// there is one.
fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<densescan::Error>() {
        return e.kind();
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    "error"
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            let msg = format!("{err:#}").replace(['\n', '\r'], " ");
            eprintln!("error: {}: {msg}", error_kind(&err));
            1
        }
    }
}
