use std::path::PathBuf;

/// Errors produced by the attack laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("rating {rating} outside scale [{min}, {max}] for user {user:?} item {item:?}")]
    RatingOutOfScale {
        rating: f64,
        min: i64,
        max: i64,
        user: String,
        item: String,
    },

    #[error("invalid configuration field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("unknown {kind} `{name}`; known: {known}")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: {msg}")]
    ShapeMismatch { msg: String },

    #[error("embedding dimension mismatch: file declares {found}, expected {expected}")]
    EmbeddingDim { found: usize, expected: usize },

    #[error("no eligible template users: every user has rated the target item")]
    NoEligibleUsers,

    #[error("target user set is empty")]
    NoTargetUsers,

    #[error("non-finite value encountered during {stage}")]
    NonFinite { stage: &'static str },

    #[error("{0}")]
    Invalid(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
