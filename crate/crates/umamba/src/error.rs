//! Error taxonomy for the forecasting toolkit.
//!
//! Every fallible public operation returns [`Error`]. Variants are grouped by
//! where the fault lies: the caller's configuration, the input data, or the
//! numerics of a run. The CLI maps these groups onto distinct exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected geometry) disagree on shape.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A configuration value is out of range or inconsistent with another.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A dataset file is malformed or does not match its declared geometry.
    #[error("data error: {0}")]
    Data(String),

    /// A cell failed to parse; positions are 1-based as a user would count them.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// A parameter or intermediate value violated a numeric precondition.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Training or inference produced a non-finite value.
    #[error("numeric divergence: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ShapeMismatch { .. } | Error::Parameter(_) => 2,
            Error::Data(_) | Error::Parse { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Checkpoint(_) | Error::Io(_) => 1,
        }
    }
}
