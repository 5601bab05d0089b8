use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("utterance too short: {samples} samples, need at least {needed}")]
    UtteranceTooShort { samples: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("sequence too long for frames: {tokens} tokens need {needed} frames, have {frames}")]
    SequenceTooLong {
        tokens: usize,
        needed: usize,
        frames: usize,
    },

    #[error("token mismatch: {0}")]
    TokenMismatch(String),

    #[error("no gradient signal")]
    NoGradientSignal,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at step {step} (loss trace: {trace:?})")]
    Divergence { step: usize, trace: Vec<f64> },

    #[error("not a TSPN1 file: {0}")]
    NotTensorFile(PathBuf),

    #[error("corrupt tensor: {0}")]
    CorruptTensor(String),

    #[error("unknown language {tag:?}; built-in inventories are {builtins}")]
    UnknownLanguage { tag: String, builtins: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Stable snake_case tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UtteranceTooShort { .. } => "utterance_too_short",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateTrainingSet(_) => "degenerate_training_set",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::TokenMismatch(_) => "token_mismatch",
            Error::NoGradientSignal => "no_gradient_signal",
            Error::NonFinite(_) => "non_finite",
            Error::Divergence { .. } => "divergence",
            Error::NotTensorFile(_) => "not_tensor_file",
            Error::CorruptTensor(_) => "corrupt_tensor",
            Error::UnknownLanguage { .. } => "unknown_language",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Wav(_) => "wav",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
