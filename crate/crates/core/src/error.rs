use thiserror::Error;

use crate::record::EpisodeRecord;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite simulation state: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid track: {0}")]
    Track(String),
    #[error("usage error: {0}")]
    Usage(String),
    /// The restartable predicate was not reached within the step budget. Carries
    /// the full record of the episode and its attempted recovery.
    #[error("reset timed out after {steps} steps")]
    ResetTimeout {
        steps: usize,
        record: Box<EpisodeRecord>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
