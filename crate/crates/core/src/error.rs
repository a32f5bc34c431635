use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path} at offset {offset}: {detail}")]
    Format { path: String, offset: u64, detail: String },

    #[error("missing referenced file {0}")]
    Reference(PathBuf),

    #[error("input too short: {frames} frames, need at least {needed}")]
    InputTooShort { frames: usize, needed: usize },

    #[error("degenerate box {0:?}")]
    Box((i64, i64, i64, i64)),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<String>, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Input(_) => 1,
            Error::Format { .. }
            | Error::Reference(_)
            | Error::Io(_)
            | Error::InputTooShort { .. }
            | Error::Box(_)
            | Error::Dimension { .. } => 2,
            Error::Numeric(_) | Error::UndefinedMetric(_) => 3,
        }
    }
}
