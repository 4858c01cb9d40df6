use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("exponential loss overflows: margin {margin} at sample {index} is beyond the representable range")]
    Range { index: usize, margin: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no separator found within {epochs} perceptron epochs (data not separable or budget too small)")]
    NotSeparable { epochs: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A proven inequality failed on a concrete iterate. Never downgraded to a warning.
    #[error("theorem falsified at t={t}: {message}")]
    Falsified { t: usize, message: String },

    #[error("divergence at t={t}: loss {loss}")]
    Divergence { t: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the CLI: 1 verification failure, 2 configuration error, 3 IO error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Falsified { .. } | Error::Divergence { .. } => 1,
            _ => 2,
        }
    }
}
