//! `thermo`: operator front end for the thermal fall-detection engine.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 configuration
//! conflict or usage error.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Mutually exclusive or inconsistent settings (exit 2).
    Conflict(String),
    /// Anything else (exit 1).
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn conflict(msg: impl Into<String>) -> Failure {
    Failure::Conflict(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Flow(a) => commands::flow(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Stream(a) => commands::stream(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Conflict(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
