use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diffusion step {k} out of range 1..={max}")]
    StepOutOfRange { k: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("split '{name}' has {len} rows, need at least {needed}")]
    SplitTooShort {
        name: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("non-numeric cell at row {row}, column {column} ('{value}')")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("singular design matrix: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("untrained model: {0}")]
    Untrained(String),

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parseable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) | Error::StepOutOfRange { .. } => "argument",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyData(_) | Error::SplitTooShort { .. } => "data",
            Error::ParseCell { .. } | Error::Csv { .. } => "csv",
            Error::Singular(_) => "numeric",
            Error::Config(_) | Error::Json(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::GradientCheck(_) => "gradcheck",
            Error::Untrained(_) => "untrained",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
