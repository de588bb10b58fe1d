//! `hnmc`: train, evaluate, apply and verify hidden neural Markov chain taggers.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failure,
//! 3 numerical failure during training or inference.

mod args;
mod data;
mod infer;
mod manifest;
mod train;
mod verify;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use hnmc::nn::NnError;
use hnmc::train::TrainError;

use args::{Cli, Command};

/// How a command ended, beyond plain success.
enum Failure {
    Usage(anyhow::Error),
    Verification,
    Numeric(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let numeric = e.chain().any(|c| {
            matches!(c.downcast_ref::<TrainError>(), Some(TrainError::NonFinite { .. }))
                || matches!(c.downcast_ref::<NnError>(), Some(NnError::NonFinite { .. }))
                || matches!(
                    c.downcast_ref::<TrainError>(),
                    Some(TrainError::Model(NnError::NonFinite { .. }))
                )
        });
        if numeric {
            Failure::Numeric(e)
        } else {
            Failure::Usage(e)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Train(a) => train::run(&a, &argv)?,
        Command::Evaluate(a) => infer::evaluate(&a, &argv)?,
        Command::Predict(a) => infer::predict(&a, &argv)?,
        Command::Verify(a) => {
            if !verify::run(&a, &argv)? {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
