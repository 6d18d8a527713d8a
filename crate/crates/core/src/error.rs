use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("loss builder is non-deterministic: two identical evaluations gave {first:e} and {second:e}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate observed index {0}")]
    DuplicateIndex(usize),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("no reference point within the kernel support of t = {0}")]
    EmptySupport(f64),

    #[error("neighbor index was built for a different case (fingerprint mismatch)")]
    FingerprintMismatch,

    #[error("invalid channel {0}")]
    InvalidChannel(usize),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("AUC is undefined unless both classes are present")]
    SingleClass,

    #[error("training diverged at epoch {epoch}, step {step}: {what} is {value}")]
    Divergence {
        epoch: usize,
        step: usize,
        what: &'static str,
        value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("capability mismatch: {0}")]
    Capability(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
