//! `filagauge`: batch front end for the filament diameter gauge.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "filagauge", version, about = "Optical filament diameter gauge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure a directory of frames into a log, defect list and patches.
    Measure(MeasureArgs),
    /// Fit per-view calibration lines from frames of known filament.
    Calibrate(CalibrateArgs),
    /// Render a synthetic frame sequence with ground truth.
    Synth(SynthArgs),
    /// Spool capacity and winding-speed schedule.
    Spool(SpoolArgs),
    /// Summary statistics and histograms of a measurement log.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Rig configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Calibration JSON from `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Directory of numbered PNG/PGM frames.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one PGM texture patch per frame.
    #[arg(long)]
    pub patches: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Sample set `DIR:DIAMETER_MM[:DISTANCE_MM]`; repeat for each set.
    /// Without a distance, `DIR/scene.json` must provide one.
    #[arg(long = "sample", required = true)]
    pub samples: Vec<String>,
    /// Output calibration JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Largest accepted residual RMS, mm/px.
    #[arg(long, default_value_t = 0.002)]
    pub max_residual: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene JSON; omitted fields take the default scene's values.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub count: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scene's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpoolArgs {
    /// Core radius, mm.
    pub radius_mm: f64,
    /// Turns per layer.
    pub turns: u32,
    /// Number of layers.
    pub layers: u32,
    /// Filament diameter, mm.
    pub diameter_mm: f64,
    /// Linear feed rate, mm/s.
    #[arg(default_value_t = 10.0)]
    pub feed_mm_s: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Measurement log CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Rig configuration supplying nominal diameter and tolerance.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1.75, conflicts_with = "config")]
    pub nominal: f64,
    #[arg(long, default_value_t = 0.05, conflicts_with = "config")]
    pub tolerance: f64,
    /// Directory for `histogram.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FILAGAUGE_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Measure(args) => commands::measure(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Synth(args) => commands::synth(args),
        Command::Spool(args) => commands::spool(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
