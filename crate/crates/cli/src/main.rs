mod chart;
mod commands;
mod config;
mod experiment;
mod manifest;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigError;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "kbl", version, about = "Kernel Bellman loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a transition dataset from an environment.
    Collect {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an evaluation, policy-optimization or verification config.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the loss identities on random tabular instances.
    Verify {
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align several runs and chart them together.
    Compare {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "out/compare")]
        out: PathBuf,
    },
    /// Closed-form TD and kernel-loss solutions for linear features.
    SolveLinear {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    if err.downcast_ref::<commands::VerificationFailed>().is_some() {
        return EXIT_NUMERICAL;
    }
    match err.downcast_ref::<kbl_core::Error>() {
        Some(kbl_core::Error::Invalid { .. } | kbl_core::Error::Dimension { .. } | kbl_core::Error::Parse { .. }) => {
            EXIT_CONFIG
        }
        Some(kbl_core::Error::Io(_) | kbl_core::Error::Csv(_)) | None => EXIT_IO,
        Some(_) => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Collect { config, out } => commands::collect(config, out.as_deref()),
        Command::Train { config, out } => commands::train(config, out.as_deref()),
        Command::Verify { config, out } => commands::verify(config.as_deref(), out.as_deref()),
        Command::Compare { inputs, out } => commands::compare(inputs, out),
        Command::SolveLinear { config, out } => commands::solve_linear(config, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
