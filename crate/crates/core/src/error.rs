use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("non-finite loss at epoch {epoch}, update {update} (path {path})")]
    NonFiniteLoss {
        epoch: usize,
        update: usize,
        path: String,
    },

    #[error("module `{0}` is not in the library")]
    UnknownModule(String),

    #[error("module `{0}` has no input model")]
    MissingInputModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least 2 samples to fit an input model, got {0}")]
    TooFewSamples(usize),

    #[error("probe set is empty")]
    EmptyProbeSet,

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("infeasible size triple: {0}")]
    InfeasibleTriple(String),

    #[error("invalid sequence: {0}")]
    Sequence(String),

    #[error("library format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt library file {}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
