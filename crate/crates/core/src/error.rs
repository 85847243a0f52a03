use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("invalid sequence for user {user}: {reason}")]
    Sequence { user: String, reason: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("no sequences")]
    NoSequences,
    #[error("invalid split: {0}")]
    Split(String),
    #[error("sequence too short: {len} events, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("unknown occupation code {0}")]
    UnknownOccupation(u16),
    #[error("invalid simulator config: {0}")]
    SimConfig(String),
    #[error("invalid generation policy: {0}")]
    Policy(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("support size mismatch: {left} vs {right}")]
    SupportMismatch { left: usize, right: usize },
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("vocabulary mismatch between datasets")]
    VocabularyMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class too small: {class} has {count} samples, need at least {min}")]
    ClassTooSmall {
        class: &'static str,
        count: usize,
        min: usize,
    },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("missing synthetic data for user {0}")]
    MissingSynthetic(String),
    #[error(transparent)]
    Backend(#[from] crate::prompt::BackendError),
}
