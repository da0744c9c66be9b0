use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("singular matrix: pivot {pivot:.3e} below tolerance")]
    SingularMatrix { pivot: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model is not constant-volume: {0}")]
    NotConstantVolume(String),

    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),

    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },

    #[error("ensemble has no members")]
    EmptyEnsemble,

    #[error("Lipschitz constant {claimed} violated: observed ratio {observed}")]
    InvalidLipschitz { claimed: f64, observed: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("invalid dimension {0}: must be even")]
    InvalidDim(usize),

    #[error("dataset is already scaled")]
    AlreadyScaled,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}
