use thiserror::Error;

use crate::fock::ModeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("state needs at least one mode")]
    EmptyModes,
    #[error("mode {0} is not part of the state")]
    UnknownMode(ModeId),
    #[error("mode {0} appears in both operands")]
    OverlappingModes(ModeId),
    #[error("occupation {occupation} on mode {mode} exceeds cutoff {cutoff}; rerun with a larger cutoff")]
    CutoffExceeded { mode: ModeId, occupation: u16, cutoff: u16 },
    #[error("coherent tail weight {tail:.3e} above tolerance {tolerance:.1e} at cutoff {cutoff}; raise the cutoff")]
    TruncationTail { tail: f64, tolerance: f64, cutoff: u16 },
    #[error("projection has zero probability")]
    ZeroProbability,
    #[error("state norm² is {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("no accepted records to estimate from")]
    NoAcceptedRecords,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
