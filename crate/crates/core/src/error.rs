use std::io;

use crate::matrix::ElemKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value range [{lo}, {hi}] is not representable as {kind}")]
    Range { kind: ElemKind, lo: i64, hi: i64 },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("element kind {0} has no GEMM kernel path")]
    UnsupportedPath(ElemKind),

    #[error("index ({row}, {col}) out of range for a {rows}x{cols} block")]
    Index {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("packed weight corrupted: nonzero value at padded coordinate ({row}, {col})")]
    Corruption { row: usize, col: usize },

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("tuning aborted, config {config}: {msg}")]
    Tune { config: String, msg: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("verification failed for {what}: {msg}")]
    Verification { what: String, msg: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
