use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {field}: {message}")]
    Config {
        origin: String,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Validation(mfqcka::Error),

    #[error("invalid range: {0}")]
    Range(String),

    #[error("{0}")]
    Engine(mfqcka::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{flagged} statistics deviate from the analytic model by more than 5 sigma")]
    Inconsistent { flagged: usize },
}

impl CliError {
    /// 2 for bad input, 3 for a failed consistency check, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Validation(_) | CliError::Range(_) => 2,
            CliError::Inconsistent { .. } => 3,
            CliError::Engine(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<mfqcka::Error> for CliError {
    fn from(e: mfqcka::Error) -> Self {
        match e {
            mfqcka::Error::InvalidParameter { .. }
            | mfqcka::Error::DecoyOrdering(_)
            | mfqcka::Error::Unsupported(_) => CliError::Validation(e),
            other => CliError::Engine(other),
        }
    }
}
