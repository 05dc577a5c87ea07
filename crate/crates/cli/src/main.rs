//! `richardson`: critical couplings, sweeps and oracle checks for pairing problems.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use richardson_core::Error;

/// Exit status for invalid input or usage.
pub const EXIT_USAGE: u8 = 2;
/// Exit status when a critical root could not be resolved.
pub const EXIT_UNRESOLVED: u8 = 3;
/// Exit status when a sweep stopped before its target.
pub const EXIT_TRUNCATED: u8 = 4;
/// Exit status when the exact-diagonalization basis is too large.
pub const EXIT_GUARD: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "richardson", version, about = "Exact solutions of the Richardson pairing equations")]
struct Cli {
    /// TOML file supplying defaults for numeric options and the output directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the n x n square-lattice model and print its level table.
    Lattice(LatticeArgs),
    /// Locate critical couplings and write them as records.
    Critical(CriticalArgs),
    /// Continue a branch to a target coupling and write path tables.
    Sweep(SweepArgs),
    /// Compare swept energies with exact diagonalization.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct LatticeArgs {
    /// Linear lattice size.
    #[arg(long)]
    pub n: usize,
    /// Number of pairs.
    #[arg(long)]
    pub pairs: usize,
    /// Problem file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Problem file.
    pub problem: PathBuf,
    /// Directory for output files and cached critical records.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CriticalArgs {
    #[command(flatten)]
    pub input: ProblemArgs,
    /// Level to scan, 1-based and repeatable; all levels when omitted.
    #[arg(long = "level")]
    pub levels: Vec<usize>,
    /// Lower end of the coupling range.
    #[arg(long, allow_hyphen_values = true)]
    pub g_min: f64,
    /// Upper end of the coupling range.
    #[arg(long, allow_hyphen_values = true)]
    pub g_max: f64,
    /// `ground` or a weak-coupling occupation such as `(1,4,2)`; repeatable.
    #[arg(long = "branch", default_value = "ground")]
    pub branches: Vec<String>,
    /// Treat each branch occupation as the non-cluster pairs of a deflated branch.
    #[arg(long)]
    pub deflated: bool,
    /// Cluster size override.
    #[arg(long)]
    pub m_k: Option<usize>,
    /// Record file; only valid with a single branch.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: ProblemArgs,
    /// `ground` or a weak-coupling occupation such as `(1,4,2)`.
    #[arg(long, default_value = "ground")]
    pub branch: String,
    /// Target coupling; must be non-zero.
    #[arg(long, allow_hyphen_values = true)]
    pub g_target: f64,
    /// Also write S_p of the cluster at this 1-based level.
    #[arg(long)]
    pub sp_level: Option<usize>,
    /// Coupling window `lo,hi` for the S_p table.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sp_window: Option<Vec<f64>>,
    /// Highest power in the S_p table; defaults to the cluster size plus one.
    #[arg(long)]
    pub sp_max: Option<usize>,
    /// Largest continuation step; smaller values give denser tables.
    #[arg(long)]
    pub max_step: Option<f64>,
    /// Ignore cached critical records.
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: ProblemArgs,
    /// Comma-separated couplings.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "grid")]
    pub g: Vec<f64>,
    /// Uniform grid `lo,hi,count`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// Largest tolerated deviation from the exact spectrum.
    #[arg(long)]
    pub tol: Option<f64>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("RICHARDSON_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("RICHARDSON_THREADS must be a positive integer, got `{raw}`")))?;
        if n == 0 {
            return Err(UsageError("RICHARDSON_THREADS must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Invalid command-line input detected outside clap.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Capacity { .. } | Error::InvalidProblem(_) | Error::Schema { .. } | Error::InvalidArgument(_)) => {
            EXIT_USAGE
        }
        Some(Error::UnresolvedRoot { .. }) => EXIT_UNRESOLVED,
        Some(Error::DimensionGuard { .. }) => EXIT_GUARD,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    init_threads()?;
    let cfg = config::Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Lattice(args) => commands::lattice(&args),
        Command::Critical(args) => commands::critical(&args, &cfg),
        Command::Sweep(args) => commands::sweep(&args, &cfg),
        Command::Verify(args) => commands::verify(&args, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
