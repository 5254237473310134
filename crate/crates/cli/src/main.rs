mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlasso::ErrorCategory;

use config::SolveFlags;

#[derive(Debug, Parser)]
#[command(name = "fedlasso", version, about = "Federated Lasso with distributed safe screening")]
struct Cli {
    /// Optional TOML file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize (or import) a dataset, QC it, and write shards + manifest.
    Gen(commands::GenArgs),
    /// Serve one shard over TCP.
    Worker(commands::WorkerArgs),
    /// Solve the regularization path; writes the path report CSV.
    Path {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step wall times.
        #[arg(long)]
        timing: Option<PathBuf>,
        /// Record every protocol message as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Broadcast shutdown to socket workers when done.
        #[arg(long)]
        shutdown_workers: bool,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Time the path with and without screening over feature counts.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leading feature counts to benchmark (default: all features).
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<usize>>,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Stability selection over subsampled path solves.
    Stability {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-path-point selection counts.
        #[arg(long)]
        per_lambda: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        subsample_size: Option<usize>,
        /// Ranked features echoed to stdout.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        shutdown_workers: bool,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Check a recorded transcript for anything but aggregates and broadcasts.
    Audit {
        #[arg(long)]
        transcript: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(fedlasso::Error),
    Config(String),
    Io(String),
    Audit(usize),
}

impl From<fedlasso::Error> for CliError {
    fn from(e: fedlasso::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(s) => write!(f, "invalid configuration: {s}"),
            CliError::Io(s) => write!(f, "io error: {s}"),
            CliError::Audit(n) => write!(f, "privacy audit found {n} violations"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Protocol => 3,
                ErrorCategory::Solver => 4,
                ErrorCategory::Io => 5,
            },
            CliError::Config(_) => 2,
            CliError::Io(_) => 5,
            CliError::Audit(_) => 6,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Gen(args) => commands::gen(&args, &file),
        Command::Worker(args) => commands::worker(&args),
        Command::Path {
            manifest,
            out,
            timing,
            transcript,
            shutdown_workers,
            flags,
        } => commands::path(
            &manifest,
            &out,
            timing.as_deref(),
            transcript.as_deref(),
            shutdown_workers,
            &flags,
            &file,
        ),
        Command::Bench {
            manifest,
            out,
            features,
            flags,
        } => commands::bench(&manifest, &out, features, &flags, &file),
        Command::Stability {
            manifest,
            out,
            per_lambda,
            transcript,
            rounds,
            subsample_size,
            top,
            shutdown_workers,
            flags,
        } => commands::stability(
            &commands::StabilityArgs {
                manifest,
                out,
                per_lambda,
                transcript,
                rounds,
                subsample_size,
                top,
                shutdown_workers,
            },
            &flags,
            &file,
        ),
        Command::Audit { transcript } => commands::audit(&transcript),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
