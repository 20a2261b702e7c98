//! `emot` command-line driver.

mod catalog;
mod commands;
mod expr;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Exit, Flags};

#[derive(Parser)]
#[command(name = "emot", version, about = "Penalized martingale transport: solve, hedge and converge scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure-side value (and the subhedging side with --both).
    Solve {
        scenario: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Subhedging value and witness, with calls.csv and delta.csv.
    Hedge {
        scenario: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Runs the scenario's sequence block and writes converge.csv.
    Converge {
        scenario: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Brute-force reference value (single period, single asset).
    Oracle {
        scenario: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Lists utilities, losses, penalties, cones and backends as JSON.
    Catalog,
    /// Checks a scenario file without solving.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { Exit::Schema as u8 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Solve { scenario, flags } => commands::solve(scenario, flags),
        Command::Hedge { scenario, flags } => commands::hedge(scenario, flags),
        Command::Converge { scenario, flags } => commands::converge(scenario, flags),
        Command::Oracle { scenario, flags } => commands::oracle(scenario, flags),
        Command::Catalog => commands::catalog(),
        Command::Validate { scenario } => commands::validate(scenario),
    };
    let code = match outcome {
        Ok(exit) => exit,
        Err(f) => {
            eprintln!("{}", f.message);
            f.exit
        }
    };
    ExitCode::from(code as u8)
}
