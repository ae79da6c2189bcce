use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("image unreadable: {0}")]
    ImageUnreadable(String),

    #[error("alignment score {0} outside [0, 1]")]
    MalformedScore(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("provider exhausted after {attempts} attempts: {last}")]
    ProviderExhausted { attempts: u32, last: String },

    #[error("no scripted response for stage {stage:?}, sample {sample:?}")]
    ScriptMissing { stage: String, sample: String },

    #[error("credential variable {0} is not set")]
    MissingCredential(String),

    #[error("evidence set has not been verified")]
    UnverifiedEvidence,

    #[error("analyst response has no verdict line: {0:?}")]
    UnparseableVerdict(String),

    #[error("empty input")]
    EmptyInput,

    #[error("error record {0:?} has no category")]
    MissingCategory(String),

    #[error("ranks for judge {judge:?}, sample {sample:?} are not a permutation of 1..{methods}")]
    NotAPermutation {
        judge: String,
        sample: String,
        methods: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRecord { .. } => "MalformedRecord",
            Error::DuplicateId(_) => "DuplicateId",
            Error::Io { .. } => "Io",
            Error::ProviderUnavailable(_) => "ProviderUnavailable",
            Error::ImageUnreadable(_) => "ImageUnreadable",
            Error::MalformedScore(_) => "MalformedScore",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::CorruptIndex(_) => "CorruptIndex",
            Error::ProviderExhausted { .. } => "ProviderExhausted",
            Error::ScriptMissing { .. } => "ScriptMissing",
            Error::MissingCredential(_) => "MissingCredential",
            Error::UnverifiedEvidence => "UnverifiedEvidence",
            Error::UnparseableVerdict(_) => "UnparseableVerdict",
            Error::EmptyInput => "EmptyInput",
            Error::MissingCategory(_) => "MissingCategory",
            Error::NotAPermutation { .. } => "NotAPermutation",
            Error::Config(_) => "Config",
            Error::Json(_) => "Json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
