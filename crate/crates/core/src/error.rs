use std::path::PathBuf;

use thiserror::Error;

use crate::io::mha::MhaError;
use crate::registration::RegistrationError;
use crate::transform::TransformError;
use crate::volume::VolumeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown target label '{0}'")]
    UnknownLabel(String),
    #[error("bounding box has zero or negative extent")]
    DegenerateBox,
    #[error("biopsy volume '{record}' does not match registration volume '{registration}'")]
    VolumeIdMismatch { record: String, registration: String },
    #[error("{records} biopsy records but {registrations} registrations")]
    CountMismatch { records: usize, registrations: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("contingency table has a zero marginal")]
    ZeroMarginal,
    #[error("chi-square statistic must be >= 0, got {0}")]
    NegativeStatistic(f64),
    #[error("split index {split} must be in 1..{sessions}")]
    BadSplit { split: usize, sessions: usize },
    #[error("phantom configuration: {0}")]
    Phantom(String),
    #[error("transform outside plausibility bounds: {0}")]
    ImplausibleTransform(String),
    #[error("{0}")]
    Invalid(String),
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
    #[error(transparent)]
    Mha(#[from] MhaError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// True for file-system and parse failures, as opposed to invalid content.
    pub fn is_io_or_parse(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Json { .. } | Error::Mha(_))
    }
}
