//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty train split: the held-out set covers every record")]
    EmptyTrain,
    #[error("empty test split: the held-out set matches no record")]
    EmptyTest,
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
    #[error("unknown attribute phrase `{0}`")]
    UnknownPhrase(String),
    #[error("empty caption")]
    EmptyCaption,
    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,
    #[error("batch size {0} is too small: need at least 2")]
    BatchTooSmall(usize),
    #[error("encoder role violation: {0}")]
    RoleViolation(String),
    #[error("split leakage: {0}")]
    Leakage(String),
    #[error("checkpoint hash mismatch: {0}")]
    HashMismatch(String),
    #[error("class `{0}` absent from classifier training labels")]
    MissingClass(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config/usage, 3 stage-hash mismatch,
    /// 4 leakage or encoder-role violation, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::HashMismatch(_) => 3,
            Error::RoleViolation(_) | Error::Leakage(_) => 4,
            Error::InvalidSchema(_)
            | Error::InvalidArg(_)
            | Error::ShapeMismatch(_)
            | Error::EmptyTrain
            | Error::EmptyTest
            | Error::UnknownSlot(_)
            | Error::UnknownPhrase(_)
            | Error::EmptyCaption
            | Error::ZeroNorm
            | Error::BatchTooSmall(_)
            | Error::MissingClass(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
