//! `fairweight` command-line tool.
//!
//! Exit codes: 0 on success, 2 for invalid inputs or configuration, 3 when a
//! pipeline stage fails.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fairweight::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 3,
            CliError::Io { .. } => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fairweight",
    version,
    about = "Influence-based sample reweighting for group fairness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Erm,
    Fairif,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test CSVs from a scenario file.
    Generate {
        scenario: PathBuf,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Train from a run config and write reports and checkpoints.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Fairif)]
        mode: Mode,
    },
    /// Print the fairness report of a checkpoint on an annotated CSV.
    Evaluate { checkpoint: PathBuf, data: PathBuf },
    /// Rerun the reweighting on subsampled validation sets.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 0.25, 0.1])]
        val_fractions: Vec<f64>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the most up- and down-weighted training samples.
    WeightsReport {
        weights: PathBuf,
        train: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { scenario, out } => commands::generate(&scenario, &out),
        Command::Train { config, mode } => commands::train(&config, mode),
        Command::Evaluate { checkpoint, data } => commands::evaluate(&checkpoint, &data),
        Command::Sweep {
            config,
            val_fractions,
            jobs,
        } => commands::sweep(&config, &val_fractions, jobs),
        Command::WeightsReport { weights, train, top } => commands::weights_report(&weights, &train, top),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
