use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A Cholesky pivot stayed non-positive after both jitter retries. In a
    /// trained model this means the chart is rank deficient at that point.
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("conjugate gradient breakdown: p'Ap = {0:e}")]
    CgBreakdown(f64),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("moment degeneracy: eigenvalue {0:e} below tolerance")]
    MomentDegeneracy(f64),

    #[error("at least two samples are required, got {0}")]
    TooFewSamples(usize),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("column {0} has zero variance on the training split")]
    ZeroVariance(usize),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimMismatch {
            context,
            expected,
            got,
        }
    }

    /// Coarse error class, used for process exit codes and the C ABI.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::DimMismatch { .. } => ErrorKind::Config,
            Error::Io(_) => ErrorKind::Io,
            Error::Parse { .. } | Error::ZeroVariance(_) | Error::Checkpoint(_) => ErrorKind::Data,
            Error::NotPositiveDefinite { .. }
            | Error::CgBreakdown(_)
            | Error::NonFinite(_)
            | Error::MomentDegeneracy(_)
            | Error::TooFewSamples(_) => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
    Data,
}

impl ErrorKind {
    /// Process exit status; malformed input data counts as an IO failure.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Io | ErrorKind::Data => 4,
        }
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}
