//! `s6dyn`: simulations, regime classification, rate fits, reordering demos
//! and parameterization checks for selective state-space token dynamics.
//!
//! Exit codes: 0 on success (a detected blow-up is a result, not a failure),
//! 2 for unreadable configs or invalid arguments, 3 when the inputs or a
//! check fail validation.

/// `println!` that exits quietly when stdout is closed early (e.g. piped
/// into `head`) instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            panic!("failed writing to stdout: {e}");
        }
    }};
}

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier of the generator behind every random draw, recorded in reports.
pub const RNG_NAME: &str = "chacha8";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug)]
pub enum CliError {
    /// Bad command-line arguments.
    Usage(String),
    /// Config file missing, unreadable or not valid JSON.
    Config(String),
    /// Inputs parsed but are not acceptable, or a check failed.
    Validation(String),
    /// Output could not be written.
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "invalid arguments: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "s6dyn", version, about = "Token dynamics of selective state-space layers")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for every random draw; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the token ODE and write trajectory/attention CSVs and a report.
    Simulate,
    /// Classify the configured parameters and tokens into a dynamical regime.
    Classify,
    /// Integrate and fit growth/decay rates of every token.
    FitRates,
    /// Score, soft-sort and reorder a random token sequence.
    ReorderDemo(ReorderArgs),
    /// Build LDLᵀ-parameterized input/output matrices and check eigenvalue signs.
    Paramcheck(ParamcheckArgs),
}

#[derive(Debug, clap::Args)]
pub struct ReorderArgs {
    /// Number of tokens.
    #[arg(long, default_value_t = 8)]
    pub len: usize,
    /// Number of channels.
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = Order::Descending)]
    pub order: Order,
    /// Use K = 0, which makes every score equal.
    #[arg(long)]
    pub zero_k: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Order {
    Descending,
    Ascending,
}

#[derive(Debug, clap::Args)]
pub struct ParamcheckArgs {
    /// Matrix dimension D (ignored when the config supplies `params.ldl`).
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Regime::Mixed)]
    pub regime: Regime,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Regime {
    Positive,
    Negative,
    Mixed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("s6dyn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
