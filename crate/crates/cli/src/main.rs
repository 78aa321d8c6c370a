//! `nmoe`: command-line driver for the ECG emotion pipeline.
//!
//! Exit codes: 0 on success, 2 on argument parse errors (from clap), 3 on
//! validation errors (bad parameter values or protocol preconditions), 4 on
//! runtime errors (missing or corrupt files, inconsistent artifacts).

mod args;
mod config;
mod index;
mod stages;

use args::{Cli, Cmd};
use clap::Parser;
use nmoe::{BackboneError, DatasetError, FusionError, SignalError, TrainError};
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// The user asked for something invalid; exit code 3.
    Validation(String),
    /// The environment or data failed us; exit code 4.
    Runtime(String),
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::InvalidCutoff { .. } => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig(_) | DatasetError::TooFewTrials(_) => {
                Self::Validation(e.to_string())
            }
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<BackboneError> for CliError {
    fn from(e: BackboneError) -> Self {
        match e {
            BackboneError::InvalidConfig(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::BatchTooSmall { .. } => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::EmptySplit(_) => {
                Self::Validation(e.to_string())
            }
            TrainError::Signal(e) => e.into(),
            TrainError::Dataset(e) => e.into(),
            TrainError::Backbone(e) => e.into(),
            TrainError::Fusion(e) => e.into(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth(a) => stages::run_synth(a),
        Cmd::Preprocess(a) => stages::run_preprocess(a),
        Cmd::Embed(a) => stages::run_embed(a),
        Cmd::Train(a) => stages::run_train(a),
        Cmd::Eval(a) => stages::run_eval(a),
        Cmd::SweepNoise(a) => stages::run_sweep_noise(a),
        Cmd::Compare(a) => stages::run_compare(a),
        Cmd::ReportAlphas(a) => stages::run_report_alphas(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
    }
}
