use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arcosh argument {0} is below the domain [1, inf)")]
    Domain(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point norm {norm} is outside the ball of radius {max}")]
    OutsideBall { norm: f64, max: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("corpus has no negative (label 0) answers to sample from")]
    NoNegatives,

    #[error("question {0} has no positive candidate")]
    NoPositives(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("{}: bad checkpoint: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
