use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CsmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CsmError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at flat offset {0}")]
    NonFinite(usize),
    #[error("concept row {row} has norm {norm}, expected 1 within 1e-4")]
    NormViolation { row: usize, norm: f64 },
    #[error("image row {0} is the zero vector")]
    ZeroRow(usize),
    #[error("label {label} at row {row} outside [0, {num_classes})")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        num_classes: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CsmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CsmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        CsmError::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        CsmError::InvalidArgument(detail.into())
    }
}
