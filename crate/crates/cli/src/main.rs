use std::process::ExitCode;

use clap::{Parser, Subcommand};
use portsel::Error;

mod commands;
mod config;

use config::{Flags, Settings};

/// Mean-variance and mean-semivariance portfolio selection.
#[derive(Debug, Parser)]
#[command(name = "portsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-asset mean and risk table.
    Stats,
    /// One portfolio: target return, lambda, GA or integer market model.
    Optimize,
    /// Efficient frontier, optional random cloud and two-asset curves.
    Frontier,
    /// In-sample frontier returns against out-of-sample realizations.
    Fit,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub const EXIT_INGESTION: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
pub const EXIT_ALIGNMENT: u8 = 5;
pub const EXIT_CONFIG: u8 = 6;
pub const EXIT_OTHER: u8 = 1;

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::NonPositivePrice { .. }
                | Error::MissingPrice { .. }
                | Error::InsufficientHistory { .. }
                | Error::DuplicateAsset(_)
                | Error::LeadingGap(_)
                | Error::UnorderedDates { .. }
                | Error::ZeroVariance(_)
                | Error::InvalidReturn { .. } => EXIT_INGESTION,
                Error::TargetOutOfRange { .. }
                | Error::Solver { .. }
                | Error::NotPositiveSemidefinite { .. } => EXIT_INFEASIBLE,
                Error::AssetAlignment(_) | Error::Dimension(_) => EXIT_ALIGNMENT,
                Error::InvalidParameter(_) => EXIT_CONFIG,
                Error::Serialization(_) => EXIT_OTHER,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.flags).map_err(CliError::Config)?;
    match cli.command {
        Command::Stats => commands::stats(&settings),
        Command::Optimize => commands::optimize(&settings),
        Command::Frontier => commands::frontier(&settings),
        Command::Fit => commands::fit(&settings),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("portsel: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
