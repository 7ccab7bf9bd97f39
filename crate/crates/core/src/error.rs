use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be positive (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },

    #[error("expected {expected} values for a {rows}x{cols} grid, got {actual}")]
    DataLength {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("grid must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("rect out of bounds")]
    RectOutOfBounds,

    #[error("empty subset")]
    EmptySubset,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("intensity too small for Gaussian approximation: {value} < {floor} at ({row}, {col})")]
    IntensityTooSmall {
        row: usize,
        col: usize,
        value: f64,
        floor: f64,
    },

    #[error("solver did not converge in {sweeps} sweeps (relative residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("covariance entry ({i}, {j}) has |rho| = {rho} >= 1")]
    DegenerateCorrelation { i: usize, j: usize, rho: f64 },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether the failure is numerical (as opposed to bad input or usage).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::DegenerateCorrelation { .. } | Error::NonFinite { .. }
        )
    }
}
