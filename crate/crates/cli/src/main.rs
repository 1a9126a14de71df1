//! `qsv`: strategy inspection, bounds, simulation, protocol sessions and
//! record analysis.
//!
//! Exit codes: 0 success (including a "no claim" verdict), 2 usage or domain
//! error, 3 I/O error, 4 protocol error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qsv_core::QsvError;

/// Overrides the default output directory of `simulate`.
pub const OUTPUT_DIR_ENV: &str = "QSV_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "qsv", version, about = "Two-qubit state verification engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a strategy's operator, spectrum and figures of merit.
    Info(InfoArgs),
    /// Number of measurements needed for a target infidelity and confidence.
    Bound(BoundArgs),
    /// Run Monte Carlo trials from a config file or a preset.
    Simulate(SimulateArgs),
    /// Run a message-passing protocol session.
    Protocol(ProtocolArgs),
    /// Check a session transcript against the round grammar and feed-forward rule.
    Validate(ValidateArgs),
    /// Verdict and per-prefix curve for a recorded accept/reject sequence.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct InfoArgs {
    /// Target angle in degrees.
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    /// lo, uni, uni-ba, bi or global.
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    strategy: String,
    /// Required for lo and uni.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// θ = 60°, LO/Uni/Bi, depolarized demo states: fig3a.csv, fig3b.csv.
    Fig3,
    /// θ = 70° and 80°, Uni/Bi, depolarized demo states: fig4a.csv, fig4b.csv.
    Fig4,
    /// Both figures with noise-free states.
    Ideal,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Output directory. Precedence: this flag, the config's `output_dir`,
    /// $QSV_OUTPUT_DIR, the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise for presets: ideal, depolarizing:V, dephasing:P, misalignment:DEG.
    #[arg(long, conflicts_with = "config")]
    noise: Option<String>,
    /// Master seed for presets.
    #[arg(long, conflicts_with = "config")]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    /// Alice leads.
    Ab,
    /// Bob leads.
    Ba,
    /// Roles switched at random every round.
    Bi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ChannelArg {
    Memory,
    Bytes,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 100)]
    rounds: u64,
    #[arg(long, value_enum, default_value_t = DirectionArg::Ab)]
    direction: DirectionArg,
    #[arg(long, default_value_t = 60.0, allow_negative_numbers = true)]
    theta: f64,
    /// ideal, depolarizing:V, dephasing:P or misalignment:DEG.
    #[arg(long, default_value = "ideal")]
    noise: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ChannelArg::Memory)]
    channel: ChannelArg,
    /// Write the transcript as JSON lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Write the session summary JSON (also printed to stdout).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Close the channel after this many frames.
    #[arg(long)]
    fault_close_after: Option<usize>,
    /// Cut the byte stream after this many bytes (implies --channel bytes).
    #[arg(long)]
    fault_truncate_bytes: Option<usize>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// JSON-lines transcript.
    transcript: PathBuf,
    /// uni, uni-ba or bi.
    #[arg(long, default_value = "uni")]
    strategy: String,
    #[arg(long, default_value_t = 60.0, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Record file: JSON with a `bits` string, or plain text of 0/1.
    record: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Overrides the record's strategy.
    #[arg(long)]
    strategy: Option<String>,
    /// Overrides the record's angle.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    /// Write the per-prefix 1/ε curve as CSV (`-` for stdout).
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

/// Failure of a subcommand, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Protocol(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Protocol(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Protocol(m) => m,
        }
    }
}

impl From<QsvError> for CliError {
    fn from(e: QsvError) -> Self {
        match e {
            QsvError::Io(_) => CliError::Io(e.to_string()),
            QsvError::Protocol(_) => CliError::Protocol(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Info(a) => commands::info(a),
        Command::Bound(a) => commands::bound(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Validate(a) => commands::validate(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
