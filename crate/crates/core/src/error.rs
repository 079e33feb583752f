use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("variable {index} does not belong to this tape")]
    ForeignVar { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("targets are not one-hot: {0}")]
    NotOneHot(String),

    #[error("divergence at {phase} step {step}: {detail}")]
    Divergence {
        phase: &'static str,
        step: usize,
        detail: String,
    },

    #[error("malformed IDX file {path}: {detail}")]
    Idx { path: PathBuf, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("nothing to write: {0}")]
    EmptyOutput(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("run {run_id} failed: {source}")]
    Run {
        run_id: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
