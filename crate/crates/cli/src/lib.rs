//! Command-line front end for the avalanche change-detection pipeline.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod manifest;

pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Bad flag combinations detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "avalanche", version, about = "Avalanche debris detection from bi-temporal SAR")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-channel normalization statistics over the training scenes.
    Stats(StatsArgs),
    /// Cut normalized scenes into patch samples and write a manifest.
    Extract(ExtractArgs),
    /// Train the change scorer on extracted patches.
    Train(TrainArgs),
    /// Tile, score and blend whole scenes.
    Infer(InferArgs),
    /// Pick the F-beta optimal threshold from probability maps.
    Tune(TuneArgs),
    /// Pixel and polygon metrics for probability maps.
    Eval(EvalArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Measure inference throughput on a generated scene.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

/// Scenes are given either one by one or as a dataset root plus split.
#[derive(Debug, Clone, Args)]
pub struct SceneSelection {
    /// Dataset root containing scenes.csv.
    #[arg(long = "in")]
    pub root: Option<PathBuf>,
    /// Split to use from the dataset root.
    #[arg(long)]
    pub split: Option<String>,
    /// Individual scene directory (repeatable); overrides --in.
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub scenes: SceneSelection,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long = "in")]
    pub root: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32, value_parser = clap::builder::PossibleValuesParser::new(["32", "64", "128"]).map(|s| s.parse::<usize>().unwrap()))]
    pub size: usize,
    /// Defaults to half the patch size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Comma-separated splits to extract.
    #[arg(long, default_value = "train,val")]
    pub splits: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// manifest.csv written by extract.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to stats.json beside the manifest.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Checkpoint path (header .json + payload .bin).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wpos: Option<f64>,
    #[arg(long = "use-aux")]
    pub use_aux: Option<Switch>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Positive patches per balanced epoch (default: all).
    #[arg(long)]
    pub positives: Option<usize>,
    /// Encoder stage widths, e.g. 16,32,64.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub augment: Option<Switch>,
    /// Training log CSV; defaults to <out>.log.csv.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub scenes: SceneSelection,
    /// Output directory; one probability raster per scene.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub blend: String,
    /// Gaussian sigma in pixels (default: patch size / 4).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Center-crop border in pixels (default: (size - stride) / 2).
    #[arg(long = "crop-border")]
    pub crop_border: Option<usize>,
    /// Tile stride (default: half the checkpoint patch size).
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Directory of probability rasters from infer.
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub scenes: SceneSelection,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub scenes: SceneSelection,
    /// Polygon inventory (single-scene runs); defaults to inventory.jsonl in each scene.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long, conflicts_with = "thresholds")]
    pub threshold: Option<f64>,
    /// Threshold file written by tune.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long = "min-size-class", default_value_t = 2)]
    pub min_size_class: u8,
    /// Skip morphological closing.
    #[arg(long = "no-morph")]
    pub no_morph: bool,
    /// Report JSON; confusion PNGs go beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON dataset config; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scene size as WIDTHxHEIGHT.
    #[arg(long, default_value = "1024x1024")]
    pub size: String,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Checkpoint to benchmark; a freshly initialized default model otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "gaussian")]
    pub blend: String,
    /// Patch size for the untrained model.
    #[arg(long, default_value_t = 128)]
    pub patch: usize,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Pixel area in m²; defaults to the scene geotransform (10 m pixels).
    #[arg(long = "pixel-area")]
    pub pixel_area: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

fn category(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<avalanche::Error>() {
            return match e {
                avalanche::Error::Io { .. }
                | avalanche::Error::Header { .. }
                | avalanche::Error::UnsupportedDtype(_)
                | avalanche::Error::SizeMismatch { .. } => EXIT_IO,
                avalanche::Error::Csv(c) if c.is_io_error() => EXIT_IO,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            category(&e)
        }
    }
}
