//! `t4c`: build traffic map movies from probe CSVs, derive static road
//! tensors, cut test sets, score predictions and run diagnostics.

mod commands;

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use t4c_core::baselines::Baseline;
use t4c_core::metrics::ChannelKind;
use t4c_core::{HeadingQuadrant, MaskMode};

#[derive(Parser, Debug)]
#[command(name = "t4c", version, about = "Traffic map movie toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate probe CSVs into one day tensor
    Ingest(IngestArgs),
    /// Derive the 9-channel static tensor from a high-res road raster
    Static(StaticArgs),
    /// Test set sampling
    #[command(subcommand)]
    Slots(SlotsCommand),
    /// Score predictions against ground truth
    Score(ScoreArgs),
    /// Diagnostics written as CSV
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Jam-like outlier events
    #[command(subcommand)]
    Outliers(OutliersCommand),
    /// Predict a test input with a reference method
    Baseline(BaselineArgs),
    /// Synthetic data for demos and benchmarks
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Glob matching probe CSV files
    #[arg(long)]
    probes: String,
    #[arg(long, value_name = "JSON")]
    city_config: PathBuf,
    /// Keep only probes on this local date
    #[arg(long)]
    date: NaiveDate,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write record tallies as JSON
    #[arg(long, value_name = "JSON")]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StaticArgs {
    /// Binary PGM or a rank-2 tensor file
    #[arg(long)]
    raster: PathBuf,
    #[arg(long, value_name = "JSON")]
    city_config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum SlotsCommand {
    /// Draw test slots from the days of a manifest
    Sample {
        /// Manifest JSON: {"city": ..., "days": {"YYYY-MM-DD": path}}
        #[arg(long)]
        days: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes <prefix>_input, _truth, _meta and _slots.json
        #[arg(long)]
        out_prefix: PathBuf,
        /// Container extension for the tensors
        #[arg(long, default_value = "h5")]
        ext: String,
    },
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Prediction file or directory
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth file or directory
    #[arg(long)]
    truth: PathBuf,
    /// Static tensor whose road cells form the mask
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "both", value_parser = parse_mask_mode)]
    mask_mode: MaskMode,
    #[arg(long, value_name = "JSON")]
    report: PathBuf,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Per-pixel MSE binned by ground-truth std
    MseStd {
        #[arg(long)]
        pred: PathBuf,
        /// Test inputs matching the truth, file or directory
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "speed", value_parser = parse_channel)]
        channel: ChannelKind,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean and std of volume and speed per directional pixel
    PixelStats {
        /// Truth files or directories
        #[arg(long, required = true, num_args = 1..)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean volume per time bin over the days of a manifest
    DailyVolume {
        #[arg(long)]
        days: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        out: PathBuf,
        /// Append rows to an existing CSV instead of overwriting it
        #[arg(long)]
        append: bool,
    },
    /// Volume and speed series of one directional pixel
    Pixel {
        /// One or more day files; several days give mean and std
        #[arg(long, required = true, num_args = 1..)]
        day: Vec<PathBuf>,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        col: usize,
        #[arg(long, value_parser = parse_heading)]
        heading: HeadingQuadrant,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum OutliersCommand {
    /// Detect events in one day tensor
    Detect {
        #[arg(long)]
        day: PathBuf,
        /// Criteria JSON; defaults apply to missing fields
        #[arg(long)]
        criteria: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions on the event pixels only, one event per test
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_name = "JSON")]
        report: PathBuf,
    },
    /// Build test sets whose last input frame is each event's first bin
    MakeTests {
        #[arg(long)]
        day: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value = "city")]
        city: String,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long, default_value = "h5")]
        ext: String,
    },
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_parser = parse_baseline)]
    method: Baseline,
    /// Test input, (12, rows, cols, 8) or (n, 12, rows, cols, 8)
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Random probes over a city grid as CSV
    Probes {
        #[arg(long, value_name = "JSON")]
        city_config: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mask_mode(s: &str) -> Result<MaskMode, String> {
    s.parse().map_err(|e: t4c_core::Error| e.to_string())
}

fn parse_channel(s: &str) -> Result<ChannelKind, String> {
    s.parse().map_err(|e: t4c_core::Error| e.to_string())
}

fn parse_heading(s: &str) -> Result<HeadingQuadrant, String> {
    s.parse().map_err(|e: t4c_core::Error| e.to_string())
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    s.parse().map_err(|e: t4c_core::Error| e.to_string())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = commands::run(Cli::parse().command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
