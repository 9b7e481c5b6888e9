//! Error type shared by every estimator, test and generator in the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {column}: {value:?} is not a finite number")]
    BadField {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: matrix contains non-finite entries")]
    NonFinite { op: &'static str },

    #[error("{op}: all eigenvalues are zero, no factor structure")]
    NoFactorStructure { op: &'static str },

    #[error("{op}: estimated factor count {d} leaves no kernel in dimension {p}")]
    NoKernel { op: &'static str, d: usize, p: usize },

    #[error("{op}: {needed} bytes required, above the cap of {cap} bytes")]
    MemoryCap {
        op: &'static str,
        needed: u64,
        cap: u64,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    /// Qualified `module.operation` name of the failing call.
    pub fn operation(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::RaggedRow { .. } | Error::BadField { .. } => {
                "panel-data.load_csv"
            }
            Error::InvalidArgument { op, .. }
            | Error::NonFinite { op }
            | Error::NoFactorStructure { op }
            | Error::NoKernel { op, .. }
            | Error::MemoryCap { op, .. } => op,
        }
    }

    /// Module component of [`Error::operation`].
    pub fn module(&self) -> &'static str {
        let op = self.operation();
        op.split('.').next().unwrap_or(op)
    }
}
