use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::ImageSig;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line in an input file failed to parse or violated a record
    /// invariant. `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("binary code length mismatch: {left} vs {right} bits")]
    CodeLength { left: usize, right: usize },

    #[error("image {0} has no visual embedding; no-visual fallback unavailable")]
    NoVisual(ImageSig),

    #[error("image {0} is not in the corpus")]
    UnknownImage(ImageSig),

    #[error("feature schema mismatch: model expects {model}, vector is {vector}")]
    SchemaMismatch { model: String, vector: String },

    #[error("cannot train on an empty triplet list")]
    NoTriplets,

    #[error("non-finite feature {feature} for pair ({query}, {candidate})")]
    NonFiniteFeature {
        query: ImageSig,
        candidate: ImageSig,
        feature: String,
    },

    #[error("unrankable query {0}: absent from candidate index and no visual embedding")]
    UnrankableQuery(ImageSig),

    #[error("evaluation requires at least one triplet")]
    EmptyEvaluation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Record {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
