//! `crnn-sim`: verification suites, task generation, training and the
//! separation sweep.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crnn_core::{Backend, CellKind};

pub const THREADS_ENV: &str = "CRNN_SIM_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// A check ran and failed; exit code 1.
    Failure(String),
    Core(crnn_core::Error),
}

impl From<crnn_core::Error> for CliError {
    fn from(e: crnn_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "crnn-sim", version, about = "Contextual recurrent network simulation toolkit")]
pub struct Cli {
    /// JSON run configuration (sections task, model, train, separation, io).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed overriding every configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Scalar backend.
    #[arg(long, global = true)]
    pub backend: Option<Backend>,
    /// Print tables instead of JSON.
    #[arg(long, global = true)]
    pub human: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the magic-square contextuality witness.
    VerifyContextuality(VerifyArgs),
    /// Generate task instances or adversarial triples as JSONL.
    GenTask(GenTaskArgs),
    /// Train a translation model on a parallel corpus.
    Train(TrainArgs),
    /// Latent-dimension sweep on adversarial triples.
    Separation(SeparationArgs),
    /// Score transcripts and checkpoints.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Comma-separated α values; rationals such as `1/3` are accepted.
    #[arg(long, value_delimiter = ',', default_value = "1,2,1/3")]
    pub alphas: Vec<String>,
    /// Additional random α in (0, 10].
    #[arg(long, default_value_t = 100)]
    pub random: usize,
    /// Corrupt one grid entry so the check must fail.
    #[arg(long)]
    pub self_test_fault: bool,
}

#[derive(Args, Debug)]
pub struct GenTaskArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    /// `squeezed` or `gkp`.
    #[arg(long, value_parser = parse_init_state)]
    pub init_state: Option<crnn_core::taskgen::InitState>,
    /// Measure the reciprocal-transformed rows.
    #[arg(long)]
    pub modified: bool,
    /// Emit this many adversarial triples instead of random instances.
    #[arg(long)]
    pub adversarial_triples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct SeparationArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub latent_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub train_triples: Option<usize>,
    #[arg(long)]
    pub test_triples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Task JSONL whose recorded transcripts are replayed.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Training output directory holding `checkpoint.*` and `run.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_init_state(s: &str) -> Result<crnn_core::taskgen::InitState, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown init state `{s}`"))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(m)) => {
            eprintln!("failed: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
