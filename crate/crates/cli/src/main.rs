//! `vda`: train, evaluate and run volume-discount auctions.

mod bids;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vda_core::exec::Exec;
use vda_core::trainer::Variant;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vda", version, about = "Volume-discount auctions: VCG baseline and learned mechanisms")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run on one thread (results are identical either way).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a learned mechanism and write its weights and log.
    Train(TrainArgs),
    /// Monte-Carlo evaluation of a mechanism on a scenario.
    Evaluate(EvaluateArgs),
    /// Run VCG on a bid file.
    Vcg(VcgArgs),
    /// Side-by-side table of evaluation reports.
    Compare(CompareArgs),
    /// Run a trained mechanism on a bid file.
    RunAuction(RunAuctionArgs),
    /// Convert a flat discount bid into a lot schedule.
    ConvertBid(ConvertArgs),
    /// Write a scenario file (the default one unless --scenario is given).
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scenario path or name (searched in $VDA_SCENARIO_DIR).
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Weights output path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log; defaults to the weights path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Add wall-clock milliseconds to log rows (makes logs non-reproducible).
    #[arg(long)]
    pub log_timing: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Misreport ascent steps per batch.
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Write `<out>.ckpt` every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Weights file, or `vcg`.
    #[arg(long)]
    pub mechanism: String,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Misreport ascent steps per start.
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Report output (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional plain-text table output.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Name shown in tables; defaults to the weights file stem.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct VcgArgs {
    #[arg(long)]
    pub bids: PathBuf,
    /// Supplies units, lots and reserve not set in the bid file.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    /// Machine-readable comparison (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plain-text table; printed to stdout as well.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunAuctionArgs {
    #[arg(long)]
    pub mechanism: PathBuf,
    #[arg(long)]
    pub bids: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// `THRESHOLD:PRICE_BELOW:PRICE_ABOVE[:REQUIREMENT]`.
    #[arg(long)]
    pub flat: String,
    #[arg(long)]
    pub units: Option<u64>,
    #[arg(long)]
    pub lots: Option<usize>,
    #[arg(long)]
    pub reserve: Option<f64>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: vda_core::trainer::TrainError| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let file = config::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => commands::train(a, &file, exec),
        Command::Evaluate(a) => commands::evaluate(a, &file, exec),
        Command::Vcg(a) => commands::vcg(a, &file),
        Command::Compare(a) => commands::compare(a),
        Command::RunAuction(a) => commands::run_auction(a),
        Command::ConvertBid(a) => commands::convert_bid(a, &file),
        Command::Scenario(a) => commands::scenario(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first).line());
            return ExitCode::from(error::Kind::Config.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
