use std::path::PathBuf;

use betadyn::{Error, Hypothesis};
use thiserror::Error;

pub const OK: i32 = 0;
pub const USAGE: i32 = 2;
pub const CONTRACTION: i32 = 10;
pub const WEAK_EXPANSION: i32 = 11;
pub const OUTSIDE_WINDOW: i32 = 12;
pub const SIMPLE_NUMBER: i32 = 13;
pub const RESPONSE_DOMAIN: i32 = 14;
pub const OTHER_HYPOTHESIS: i32 = 15;
pub const IO: i32 = 20;
pub const NUMERICAL: i32 = 21;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Hypothesis(h)) => match h {
                Hypothesis::ContractionRatio { .. } => CONTRACTION,
                Hypothesis::WeakExpansion { .. } => WEAK_EXPANSION,
                Hypothesis::OutsideWindow { .. } => OUTSIDE_WINDOW,
                Hypothesis::SimpleNumber { .. } => SIMPLE_NUMBER,
                Hypothesis::ResponseDomain { .. } | Hypothesis::ResponseDelta { .. } => {
                    RESPONSE_DOMAIN
                }
                Hypothesis::NoContraction { .. } | Hypothesis::NotExpanding { .. } => {
                    OTHER_HYPOTHESIS
                }
            },
            CliError::Core(
                Error::Domain { .. }
                | Error::InvalidSystem(_)
                | Error::InvalidModel(_)
                | Error::InvalidStepFunction(_),
            ) => USAGE,
            CliError::Core(
                Error::Singular(_) | Error::NonConvergence { .. } | Error::Precision(_),
            ) => NUMERICAL,
            CliError::Io { .. } => IO,
            CliError::Usage(_) => USAGE,
        }
    }
}
