use std::path::PathBuf;

use thiserror::Error;

/// Which arcsine in the angle-of-arrival computation left its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleKind {
    Elevation,
    Azimuth,
}

impl std::fmt::Display for AngleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AngleKind::Elevation => f.write_str("elevation"),
            AngleKind::Azimuth => f.write_str("azimuth"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{angle} angle out of domain: asin argument {argument} is outside [-1, 1]")]
    AngleDomain { angle: AngleKind, argument: f64 },

    #[error("negative radicand {radicand} when solving for y (target behind the array)")]
    NegativeRadicand { radicand: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label:?}, vector {index}: expected length {expected}, got {got}")]
    DimensionMismatch {
        label: String,
        index: usize,
        expected: usize,
        got: usize,
    },

    #[error("label {label:?}, vector {index}: non-finite value at position {position}")]
    NonFinite {
        label: String,
        index: usize,
        position: usize,
    },

    #[error("label {label:?}: has {got} descriptions, other labels have {expected}")]
    RaggedEntries {
        label: String,
        expected: usize,
        got: usize,
    },

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
