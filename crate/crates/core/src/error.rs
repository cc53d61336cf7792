use thiserror::Error;

/// Errors produced by the jackstraw library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("rows with zero variance cannot be analysed: {}", .0.join(", "))]
    DegenerateRows(Vec<String>),

    #[error("invalid rank {r}: must satisfy 1 <= r <= {max}")]
    InvalidRank { r: usize, max: usize },

    #[error("decomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("basis is rank deficient")]
    SingularBasis,

    #[error("residual sum of squares is zero (perfect fit)")]
    PerfectFit,

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("row index {index} out of range for {rows} rows")]
    InvalidIndex { index: usize, rows: usize },

    #[error("invalid null mode: {0}")]
    InvalidMode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("refusing to resume: checkpoint {0}")]
    RefuseResume(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
