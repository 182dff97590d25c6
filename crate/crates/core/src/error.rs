use thiserror::Error;

use crate::types::SatelliteId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("position {0:.3} m from the geocenter is inside the Earth")]
    InsideEarth(f64),

    #[error("receiver and satellite positions coincide")]
    DegenerateGeometry,

    #[error("elevation {0:.4} rad is below the mask")]
    BelowMask(f64),

    #[error("{sat}: missing {what}")]
    MissingMeasurement { sat: SatelliteId, what: &'static str },

    #[error("insufficient satellites: need {needed}, have {available}")]
    InsufficientSatellites { needed: usize, available: usize },

    #[error("geometry too weak (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("loss of lock inside phase track of {sat} at epoch {epoch}")]
    SlipInsideTrack { sat: SatelliteId, epoch: usize },

    #[error("normal matrix is rank deficient at epoch {epoch} (state index {index})")]
    RankDeficient { epoch: usize, index: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset rejected: {0}")]
    InvalidDataset(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("no epochs")]
    NoEpochs,

    #[error("trajectories share no epochs")]
    NoCommonEpochs,

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
