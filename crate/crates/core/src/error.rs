use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("data error: {0}")]
    Data(String),

    #[error("metric undefined for scope {scope}: {reason}")]
    UndefinedMetric { scope: String, reason: String },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for a command that fails with this error:
    /// 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::NumericFailure(_) => 3,
            Error::Shape { .. }
            | Error::MissingColumn { .. }
            | Error::Data(_)
            | Error::UndefinedMetric { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 2,
        }
    }
}
