//! Error type shared by every module.

use std::path::PathBuf;

/// Errors raised by environment construction, dataset building, training,
/// diagnostics, and the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A weight vector could not be formed.
    #[error("invalid weight vector: {0}")]
    InvalidWeight(String),

    /// An index fell outside its owning collection.
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Vector lengths disagree.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An argument violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A domain invariant was violated during construction.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A loss was requested on an empty dataset.
    #[error("empty dataset for objective {objective}")]
    EmptyDataset { objective: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged in phase {phase} at epoch {epoch}: loss = {loss}")]
    Diverged {
        phase: usize,
        epoch: usize,
        loss: f64,
    },

    /// Preference pair assembly failed for a group.
    #[error("cannot build pairs for group {group}: {reason}")]
    Construction { group: u32, reason: String },

    /// A distribution assigns zero reference mass where the policy does not.
    #[error("support mismatch at prompt {prompt}, response {response}")]
    SupportMismatch { prompt: usize, response: usize },

    /// Configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("malformed input {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
