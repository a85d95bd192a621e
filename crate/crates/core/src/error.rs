use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("character {0:?} (U+{code:04X}) is not in the vocabulary", code = *.0 as u32)]
    UnknownCharacter(char),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("sequence is empty")]
    EmptySequence,

    #[error("sequence too short: need at least {needed} tokens, got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("corpus {0} is empty")]
    EmptyCorpus(String),

    #[error("{path}: not valid UTF-8 (first bad byte at offset {offset})")]
    InvalidEncoding { path: PathBuf, offset: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
