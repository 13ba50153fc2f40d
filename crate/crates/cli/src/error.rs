use std::process::ExitCode;

use fsi_core::companion::CompanionError;
use fsi_core::exactprob::ProbError;
use fsi_core::pairbuilder::PairError;
use fsi_core::schedule::ScheduleError;
use fsi_core::shuffler::ShufflerError;
use fsi_core::words::WordError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    /// A search, enumeration or checkpoint budget ran out.
    #[error("{0}")]
    Cap(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &str, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_string(), message: e.to_string() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 64,
            CliError::Domain(_) | CliError::Io { .. } => 1,
            CliError::Cap(_) => 2,
        })
    }
}

impl From<WordError> for CliError {
    fn from(e: WordError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ShufflerError> for CliError {
    fn from(e: ShufflerError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ProbError> for CliError {
    fn from(e: ProbError) -> Self {
        match e {
            ProbError::BudgetExceeded { .. } => CliError::Cap(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<PairError> for CliError {
    fn from(e: PairError) -> Self {
        if e.is_budget() {
            CliError::Cap(e.to_string())
        } else {
            CliError::Domain(e.to_string())
        }
    }
}

impl From<CompanionError> for CliError {
    fn from(e: CompanionError) -> Self {
        if e.is_cap_exhaustion() {
            CliError::Cap(e.to_string())
        } else {
            CliError::Domain(e.to_string())
        }
    }
}
