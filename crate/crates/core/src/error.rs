use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("{dim} of size {len} is not divisible into {parts} blocks")]
    NonDivisible {
        dim: &'static str,
        len: usize,
        parts: usize,
    },

    #[error("mask is not block-regular in block ({block_row}, {block_col})")]
    NotBlockRegular { block_row: usize, block_col: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backbone has {blocks} blocks of size {p_size}; at least 2 are required")]
    TooSmall { blocks: usize, p_size: usize },

    #[error("timing constraint infeasible: {0}")]
    Infeasible(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("degenerate accuracy range: original accuracy {a_o} equals floor {a_m}")]
    DegenerateRange { a_o: f64, a_m: f64 },

    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    DivergenceDetected { epoch: usize, batch: usize },

    #[error("no explored configuration satisfies the timing constraint")]
    NoFeasible,

    #[error("battery exhausted: {remaining} left, next run needs {required}")]
    Exhausted { remaining: f64, required: f64 },

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// Coarse class of the failure, used by front-ends to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Infeasible(_) | Error::NoFeasible => ErrorKind::Infeasible,
            Error::DivergenceDetected { .. } => ErrorKind::Numeric,
            Error::Exhausted { .. } => ErrorKind::Runtime,
            _ => ErrorKind::Config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Infeasible,
    Numeric,
    Runtime,
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
