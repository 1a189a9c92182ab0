use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

use gymsense_core::{ActivityLabel, Position, SignalSource};

#[derive(Debug, Parser)]
#[command(name = "gymsense", version, about = "Gym workout recognition, repetition counting and user authentication")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth repetition counts.
    Synth(SynthArgs),
    /// Parse a dataset and print a per-session summary.
    Ingest(IngestArgs),
    /// Leave-one-user-out recognition over a position × source grid.
    Eval(EvalArgs),
    /// Repetition counting accuracy per exercise and source.
    Count(CountArgs),
    /// Day-held-out subject authentication on one activity.
    Auth(AuthArgs),
    /// Re-render confusion CSV/SVG files from a report.json.
    Report(ReportArgs),
    /// Re-execute the command recorded in a run_manifest.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PositionArg {
    Wrist,
    Leg,
    Pocket,
}

impl From<PositionArg> for Position {
    fn from(p: PositionArg) -> Self {
        match p {
            PositionArg::Wrist => Position::Wrist,
            PositionArg::Leg => Position::Leg,
            PositionArg::Pocket => Position::Pocket,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Hbc,
    Imu,
    Combined,
}

impl From<SourceArg> for SignalSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Hbc => SignalSource::Hbc,
            SourceArg::Imu => SignalSource::Imu,
            SourceArg::Combined => SignalSource::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridModeArg {
    /// Peak parameters searched on all segments.
    UpperBound,
    /// Peak parameters searched on the other subjects' segments.
    Louo,
}

fn parse_activity(s: &str) -> Result<ActivityLabel, String> {
    s.parse::<ActivityLabel>().map_err(|e| e.to_string())
}

fn parse_subjects(s: &str) -> Result<u32, String> {
    let n: u32 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if n < 2 {
        return Err("at least 2 subjects are needed (leave-one-user-out holds one out)".into());
    }
    if n > 10 {
        return Err("at most 10 subjects are supported".into());
    }
    Ok(n)
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2, value_parser = parse_subjects)]
    pub subjects: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=5))]
    pub days: u32,
    /// Workouts to include (repeatable); defaults to Squat, Armcurl, Running.
    #[arg(long = "activity", value_parser = parse_activity)]
    pub activities: Vec<ActivityLabel>,
    /// Wearing positions (repeatable); defaults to wrist.
    #[arg(long = "position", value_enum)]
    pub positions: Vec<PositionArg>,
    #[arg(long, default_value_t = 3)]
    pub sets: u32,
    #[arg(long, default_value_t = 10)]
    pub reps: u32,
    /// Rest (Null) between sets, seconds.
    #[arg(long, default_value_t = 10.0)]
    pub rest: f64,
    /// Disable the additive sensor noise.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Accept the upstream Squat_concrete/_wood/_rubber label spellings.
    #[arg(long)]
    pub squat_variants: bool,
}

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub position: Option<PositionArg>,
    /// Also write the summary as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Early-stopping patience in epochs (defaults to 100, capped below --epochs).
    #[arg(long)]
    pub patience: Option<usize>,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Positions to evaluate (repeatable); defaults to every position present.
    #[arg(long = "position", value_enum)]
    pub positions: Vec<PositionArg>,
    /// Signal sources to evaluate (repeatable); defaults to all three.
    #[arg(long = "source", value_enum)]
    pub sources: Vec<SourceArg>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Positions to evaluate (repeatable); defaults to every position present.
    #[arg(long = "position", value_enum)]
    pub positions: Vec<PositionArg>,
    #[arg(long, value_enum, default_value = "upper-bound")]
    pub grid_mode: GridModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct AuthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "wrist")]
    pub position: PositionArg,
    #[arg(long, value_enum, default_value = "combined")]
    pub source: SourceArg,
    #[arg(long, default_value = "Running", value_parser = parse_activity)]
    pub activity: ActivityLabel,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// A report.json written by `eval` or `auth`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("WS_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().with_context(|| format!("WS_THREADS=`{raw}` is not a thread count"))?;
    if n == 0 {
        bail!("WS_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    Ok(())
}

pub fn run(cli: Cli, argv: &[String]) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a, argv),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Eval(a) => commands::eval(&a, argv),
        Command::Count(a) => commands::count(&a, argv),
        Command::Auth(a) => commands::auth(&a, argv),
        Command::Report(a) => commands::report(&a),
        Command::Replay(a) => manifest::replay(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli, &argv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
