use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto a small set of exit codes: usage/config, validation, I/O and
/// corruption.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient points: need more than k={k} points, got {n}")]
    InsufficientPoints { n: usize, k: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("schema error at row {row}: {msg}")]
    Schema { row: u64, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("point is {residual_mm:.3e} mm off the frame plane of frame {frame_index}")]
    WrongFrame { frame_index: u32, residual_mm: f64 },

    #[error("i/o error on {path}: {source}")]
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
}

pub type Result<T> = std::result::Result<T, Error>;
