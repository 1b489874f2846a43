//! Command-line entry point. Exit codes: 0 success (warnings allowed),
//! 1 usage error, 2 data error, 3 internal invariant violation.

mod commands;
mod config;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ToolConfig;

#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(m) => write!(f, "usage error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }
}

impl From<evrisk_core::Error> for AppError {
    fn from(e: evrisk_core::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<anyhow::Error> for AppError {
    fn from(e: anyhow::Error) -> Self {
        AppError::Data(format!("{e:#}"))
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "evrisk", version, about = "Streaming event-graph risk scoring")]
struct Cli {
    /// Master seed for everything random.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (1 keeps runs byte-reproducible by construction;
    /// higher counts stay reproducible through ordered reductions).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// JSON config file; flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labeled synthetic scenarios.
    Synth(commands::synth::SynthArgs),
    /// Convert frames to an event file.
    Convert(commands::convert::ConvertArgs),
    /// Train a model on scenarios.
    Train(commands::train::TrainArgs),
    /// Score scenarios with a trained model.
    Infer(commands::infer::InferArgs),
    /// Evaluate scores against labels.
    Eval(commands::eval::EvalArgs),
    /// Measure throughput, latency, and update speedup.
    Bench(commands::bench::BenchArgs),
    /// Run the built-in oracle suites.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EAE_LOG", "info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let cfg = match ToolConfig::load(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };

    let result = match &cli.command {
        Command::Synth(args) => commands::synth::run(args, &cfg, cli.seed, cli.threads),
        Command::Convert(args) => commands::convert::run(args, &cfg, cli.seed, cli.threads),
        Command::Train(args) => commands::train::run(args, &cfg, cli.seed, cli.threads),
        Command::Infer(args) => commands::infer::run(args, &cfg, cli.seed, cli.threads),
        Command::Eval(args) => commands::eval::run(args, &cfg, cli.seed, cli.threads),
        Command::Bench(args) => commands::bench::run(args, &cfg, cli.seed, cli.threads),
        Command::Selftest => commands::selftest::run(),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
