use std::path::PathBuf;

use thiserror::Error;

use crate::model::FeasibilityViolation;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Input,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dimension {dim} exceeds the enumeration cap of {cap}")]
    EnumerationCap { dim: usize, cap: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("infeasible moment constraints: {}", format_violations(.0))]
    Infeasible(Vec<FeasibilityViolation>),

    #[error("pair ({i}, {j}): target covariance {target:.6e} outside attainable range [{lower:.6e}, {upper:.6e}]")]
    LatentCorrelationInfeasible {
        i: usize,
        j: usize,
        target: f64,
        lower: f64,
        upper: f64,
    },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("inconsistent marginals: row targets sum to {row_total}, column targets sum to {col_total}")]
    InconsistentMarginals { row_total: f64, col_total: f64 },

    #[error("{axis} {index} of the initial matrix is all zero but its target is {target}")]
    ZeroMargin {
        axis: &'static str,
        index: usize,
        target: f64,
    },

    #[error("zone {0} contains no nodes")]
    EmptyZone(String),

    #[error("mixed coordinate modes (geographic and planar)")]
    MixedCoordinateModes,

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::EnumerationCap { .. } => ErrorKind::Config,
            Error::Numerical { .. } | Error::Factorization(_) => ErrorKind::Numerical,
            _ => ErrorKind::Input,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[FeasibilityViolation]) -> String {
    let shown: Vec<String> = v.iter().take(5).map(|x| x.to_string()).collect();
    let mut s = shown.join("; ");
    if v.len() > 5 {
        s.push_str(&format!("; ... ({} pairs total)", v.len()));
    }
    s
}
