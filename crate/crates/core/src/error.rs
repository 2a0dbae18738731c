//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Broad failure category, used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty evidence: all counts are zero")]
    EmptyEvidence,

    #[error("noise level too large: {0}")]
    NoiseTooLarge(f64),

    #[error("class alphabet exhausted: {0} beliefs requested, at most 6 class tokens exist")]
    ClassAlphabetExhausted(usize),

    #[error("unmapped belief: {0:?}")]
    UnmappedBelief(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out-of-vocabulary token: {0}")]
    OutOfVocabulary(String),

    #[error("sequence of length {len} exceeds context length {max}")]
    LengthOverflow { len: usize, max: usize },

    #[error("no belief mass: class-token probability {0:e} below renormalization floor")]
    NoBeliefMass(f64),

    #[error("unknown topic id {0}")]
    UnknownTopic(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("checkpoint format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) | Error::NoBeliefMass(_) => {
                ErrorKind::Numeric
            }
            Error::ClassAlphabetExhausted(_)
            | Error::InvalidArgument(_)
            | Error::NoiseTooLarge(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
