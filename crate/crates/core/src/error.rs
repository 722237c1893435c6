//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus handling, training, decoding, and the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("vocabulary holds {size} tokens, beyond the configured cap of {cap}")]
    VocabOverflow { size: usize, cap: usize },

    #[error("token id {0} is out of range")]
    BadTokenId(u32),

    #[error("token id {0} has no trained embedding")]
    UntrainedToken(u32),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("missing artifact `{artifact}`; run `{producer}` first")]
    MissingArtifact { artifact: String, producer: String },

    #[error("artifact `{artifact}` was built from a different config (hash {found}, expected {expected}); refusing to mix artifacts")]
    ConfigMismatch {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error("work dir is locked by another command ({0}); remove the lock file if that command is no longer running")]
    Locked(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
