use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the benchmark stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented invariant (bad config, bad scene, ...).
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("placement infeasible: placed {placed} of {requested} objects after {attempts} attempts")]
    PlacementInfeasible {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("mask coverage infeasible: requested {requested}, realized {realized}")]
    CoverageInfeasible { requested: f64, realized: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("scene {index} (seed {seed:#018x}) failed: {source}")]
    Scene {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// True for errors caused by user input (configs, files that fail to
    /// parse or validate) rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::Format { .. } | Error::CoverageInfeasible { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
