use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed audio file: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid band {low}..{high} Hz: {reason}")]
    InvalidBand { low: f64, high: f64, reason: String },

    #[error("invalid quefrency partition: {0}")]
    InvalidPartition(String),

    #[error("incompatible signatures: {0}")]
    IncompatibleSignature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid feature range: {0}")]
    InvalidRange(String),

    #[error("envelope has no resonance peaks to perturb")]
    NoPeaks,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = validation, 3 = I/O, 4 = insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::InsufficientData(_) | Error::EmptyInput(_) => 4,
            _ => 2,
        }
    }
}
