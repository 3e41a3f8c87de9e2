use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension error at {stage}: {detail}")]
    Dimension { stage: String, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt payload: expected {expected} bytes, found {actual} ({} short)", expected.saturating_sub(*actual))]
    Corrupt { expected: u64, actual: u64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("alignment error: missing utterances {0:?}")]
    Alignment(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

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

    pub(crate) fn dim(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            stage: stage.into(),
            detail: detail.into(),
        }
    }
}
