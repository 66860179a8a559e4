use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("unknown experiment `{0}` (try `simulate list`)")]
    UnknownExperiment(String),
    #[error("{experiment} failed at {coords}: {message}")]
    Sweep {
        experiment: &'static str,
        coords: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True for problems with the user's input rather than the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Parse(_) | Self::Validation { .. } | Self::UnknownExperiment(_)
        )
    }
}
