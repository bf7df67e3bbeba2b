use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("alignment error: run `{run}` has {found} timestamps, expected {expected}")]
    Alignment {
        run: String,
        expected: usize,
        found: usize,
    },

    #[error("input contains no data rows")]
    EmptyInput,

    #[error("duplicate row for run `{run}` at timestamp {timestamp}")]
    DuplicateRow { run: String, timestamp: i64 },

    #[error("window size {t_w} is invalid for series of length {len}")]
    WindowSize { t_w: usize, len: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state space of {states} joint assignments exceeds the cap of {cap}; reduce K or r_w")]
    Capacity { states: u128, cap: usize },

    #[error("invalid configuration: `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user configuration rather than by data or runtime state.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Capacity { .. })
    }
}
