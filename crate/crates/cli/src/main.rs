mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::SeparateArgs;
use crate::error::CliResult;

/// Generalized symmetric FastICA: separation, asymptotic predictions and
/// Monte Carlo experiments.
#[derive(Parser)]
#[command(name = "gsfica", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate the channels of a CSV file.
    Separate(SeparateArgs),
    /// Moment functionals, gain variances, Cramér–Rao bounds and contrast signs.
    Predict {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run a Monte Carlo experiment or an N sweep (GSFICA_THREADS caps the workers).
    Simulate {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Contrast values over the (phi, chi) rotation grid around the identity.
    Surface {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Separate(args) => commands::separate(&args),
        Command::Predict { config, out } => commands::predict_cmd(&config, &out),
        Command::Simulate { config, out } => {
            commands::simulate(&config, &out, commands::threads_from_env()?)
        }
        Command::Surface { config, out } => commands::surface(&config, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
