//! `nar`: train, evaluate and probe neural algorithmic reasoners.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nar_core::model::Mode;
use nar_core::Task;

/// Exit status for an invalid configuration, checkpoint or request.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status when training aborts.
pub const EXIT_ABORT: u8 = 3;

/// An error together with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_CONFIG, error: error.into() }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, error: e.into() }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "nar", version, about = "Neural algorithmic reasoners trained from input/output pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and score each on the test set.
    Train(TrainArgs),
    /// Score a checkpoint, or every seed of a run directory.
    Eval(EvalArgs),
    /// Write probe curves as CSV.
    Probe(ProbeArgs),
    /// Run the oracle, gradient and loss-identity checks.
    Verify(VerifyArgs),
    /// Write a dataset as JSON lines.
    Gen(GenArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override such as `train.max_steps=100`; repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Contrastive weight.
    #[arg(long)]
    pub w: Option<f64>,
    /// Number of seeds, numbered from 0.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Run directory; defaults to `$NAR_RUN_DIR/<task>-<mode>-<hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root for run directories.
    #[arg(long, env = "NAR_RUN_DIR", default_value = "runs")]
    pub run_root: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory or run directory.
    pub path: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file; a run directory gets one `eval-<size>.json` per seed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    Stability,
    Equivalence,
}

#[derive(Args)]
pub struct ProbeArgs {
    /// Checkpoint directory.
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub probe: ProbeKind,
    /// Instances (stability) or equivalence pairs to average over.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the CSV files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Random cases per oracle check.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Sampled coordinates per gradient check.
    #[arg(long, default_value_t = 100)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 128)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Probe(a) => commands::probe(a),
        Command::Verify(a) => commands::verify(a),
        Command::Gen(a) => commands::gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}
