mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Light-field super-resolution: data prep, training, inference, evaluation and audits.
#[derive(Debug, Parser)]
#[command(name = "l2fm", version)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "L2FM_THREADS")]
    pub threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop and degrade a view grid into a scene container.
    Prep(PrepArgs),
    /// Super-resolve a scene container.
    Sr(SrArgs),
    /// Score a dataset manifest.
    Eval(EvalArgs),
    /// Count parameters and FLOPs of a configuration.
    Count(CountArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Run the built-in invariant battery.
    Selfcheck(SelfcheckArgs),
    /// Train a model.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = l2fm::data::DEFAULT_VIEW_PATTERN)]
    pub pattern: String,
    #[arg(long, default_value_t = 5)]
    pub angular: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Scene name (default: input directory name).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorMode {
    BicubicChroma,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub color: Option<ColorMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Needed for scenes without a precomputed prediction.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// CSV report; a JSON report is written next to it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub shave: usize,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Model config (`key = value`); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub flops: bool,
    #[arg(long, default_value_t = 5)]
    pub angular: usize,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub angular: usize,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config: training keys plus `model.`-prefixed model keys.
    #[arg(long)]
    pub config: PathBuf,
    /// Scene container or dataset manifest (`.json`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input, flags or files (exit 1).
    User(String),
    /// A checked invariant did not hold (exit 2).
    Invariant(String),
}

impl From<l2fm::Error> for Failure {
    fn from(e: l2fm::Error) -> Self {
        Failure::User(e.to_string())
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
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = std::panic::catch_unwind(|| commands::run(&cli))
        .unwrap_or_else(|_| Err(Failure::Invariant("internal error".into())));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(2)
        }
    }
}
