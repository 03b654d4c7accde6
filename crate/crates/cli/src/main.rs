//! `sqrec`: generate superquadric range-image datasets, recover models
//! from them and score the results.

mod common;
mod compose;
mod evaluate;
mod generate;
mod recover;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sqrec", version, about = "Superquadric scene synthesis, recovery and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and render a train/val/test dataset.
    Generate(generate::GenerateArgs),
    /// Fit one superquadric per segment of every scene.
    Recover(recover::RecoverArgs),
    /// Score predictions against a dataset manifest.
    Evaluate(evaluate::EvaluateArgs),
    /// Combine shifted depth rasters with a pixelwise maximum.
    Compose(compose::ComposeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Recover(a) => recover::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Compose(a) => compose::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
