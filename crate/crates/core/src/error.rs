use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix is not symmetric (max relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("invalid embedding plan at step {step}: {reason}")]
    InvalidPlanStep { step: usize, reason: String },

    #[error("plan parse error at offset {offset}: {reason}")]
    PlanParse { offset: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parameter count {count} exceeds Hessian cap {cap}")]
    HessianCapExceeded { count: usize, cap: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("malformed data in {path} at line {line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("bad IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint decode error: {0}")]
    Decode(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
