mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use schedlift::executor::{resolve_threads, CostMode, MeasureProtocol};

pub const VERSION: &str = env!("SCHEDLIFT_VERSION");
pub const DEFAULT_SEED: u64 = 20220412;

#[derive(Parser, Debug)]
#[command(name = "schedlift", version = VERSION, about = "Auto-tune tensor kernels and transfer schedules between models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Write a built-in model preset as a descriptor file.
    Gen(GenArgs),
    /// Auto-tune every concrete kernel of a model and append the winners to a record store.
    Autotune(AutotuneArgs),
    /// Rank candidate tuning models for a target by the class-overlap heuristic.
    Select(SelectArgs),
    /// Transfer-tune a target model from stored schedules.
    Transfer(TransferArgs),
    /// Check stored schedules against a model's kernels with the reference interpreter.
    Verify(VerifyArgs),
    /// Re-render a saved transfer report.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    /// Preset name (see --list).
    #[arg(required_unless_present = "list")]
    pub preset: Option<String>,
    #[arg(long)]
    pub list: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Measurement settings shared by the tuning commands.
#[derive(Args, Debug, Serialize)]
pub struct ProtocolArgs {
    /// Rank candidates by the analytic proxy cost instead of wall-clock time.
    /// Results are then reproducible bit for bit.
    #[arg(long)]
    pub deterministic_cost: bool,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub timed: Option<usize>,
    /// Worker threads for parallel loops (SCHEDLIFT_THREADS takes precedence).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Abandon a candidate once a timed run exceeds this multiple of the best.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

impl ProtocolArgs {
    pub fn resolve(&self) -> MeasureProtocol {
        let mut p = if self.deterministic_cost {
            MeasureProtocol::proxy()
        } else {
            MeasureProtocol::default()
        };
        if let Some(w) = self.warmup {
            p.warmup_runs = w;
        }
        if let Some(t) = self.timed {
            p.timed_runs = t;
        }
        if self.threads.is_some() || p.mode == CostMode::WallClock {
            p.threads = resolve_threads(self.threads);
        }
        p.cutoff_ratio = self.cutoff;
        p
    }
}

#[derive(Args, Debug, Serialize)]
pub struct AutotuneArgs {
    /// Descriptor file or preset name.
    #[arg(long)]
    pub model: String,
    /// Candidates measured per kernel.
    #[arg(long, default_value_t = 128)]
    pub budget: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub population: usize,
    #[arg(long, default_value_t = 2)]
    pub verify_trials: usize,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Record store to append to [default: <out>/records.jsonl].
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    /// Model name or file stem in the library, or a descriptor file.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value = "fixtures/paper")]
    pub library: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TransferArgs {
    /// Descriptor file or preset name.
    #[arg(long)]
    pub target: String,
    /// Model whose records are replayed.
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool")]
    pub source: Option<String>,
    /// Replay records from every model in the store.
    #[arg(long)]
    pub pool: bool,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub verify_trials: usize,
    /// Timed runs of the final untuned-versus-composed program comparison.
    #[arg(long, default_value_t = schedlift::transfer::DEFAULT_PROGRAM_RUNS)]
    pub program_runs: usize,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    /// Descriptor file or preset name.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// A report.json written by `transfer`.
    #[arg(long)]
    pub input: PathBuf,
    /// json, csv or md.
    #[arg(long, default_value = "md")]
    pub format: String,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status 1: bad input the user can fix. Status 2: everything else.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Internal(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Internal(e.into())
    }
}

pub fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
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
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}
