use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward pass needs a training-mode context; this lookup was served from frozen codes")]
    ServingContext,

    #[error("model is not frozen for serving")]
    NotFrozen,

    #[error("model is frozen; training is no longer possible")]
    Frozen,

    #[error("requested {requested} pairs but only {max} distinct pairs exist")]
    InfeasiblePairs { requested: usize, max: usize },

    #[error("data unavailable: {0}")]
    DataUnavailable(String),

    #[error("evaluation split is empty")]
    EmptyEvalSplit,

    #[error("category {0:?} has too few items for the similarity analysis")]
    SparseCategory(String),

    #[error("bad magic bytes; not a packed model file")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed packed model: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
