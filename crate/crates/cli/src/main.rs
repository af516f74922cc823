//! `dcsim`: trace analysis, scheduler replay, duration model training, node
//! usage forecasting and energy-saving replays from one executable.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "dcsim", version, about, args_override_self = true)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Flat `key = value` file of flags for this subcommand; command-line flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Characterize a trace: duration CDFs, utilization, demand and status breakdowns, per-user stats.
    Analyze(commands::AnalyzeArgs),
    /// Replay a trace under one or more scheduling policies.
    Simulate(commands::SimulateArgs),
    /// Train the job duration model on jobs that finished before a cutoff.
    Train(commands::TrainArgs),
    /// Train the running-node forecaster and forecast past a cutoff.
    Forecast(commands::ForecastArgs),
    /// Replay node usage under the energy-saving controller.
    Ces(commands::CesArgs),
    /// Generate a synthetic trace and a matching cluster spec.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Ces(a) => commands::ces(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
