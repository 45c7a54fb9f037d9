use thiserror::Error;

/// Errors produced anywhere in the detection head, data generator or evaluator.
#[derive(Debug, Error)]
pub enum ZsdError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("class `{0}` is missing from the embedding file")]
    MissingClass(String),
    #[error("class `{0}` appears more than once")]
    DuplicateClass(String),
    #[error("class `{0}` is not part of the vocabulary")]
    UnknownClass(String),
    #[error("embedding dimension mismatch for `{class}`: expected {expected}, found {found}")]
    DimensionMismatch {
        class: String,
        expected: usize,
        found: usize,
    },
    #[error("zero-norm vector for `{0}`")]
    ZeroNorm(String),
    #[error("label {label} out of range (max {max})")]
    LabelOutOfRange { label: usize, max: usize },
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("row {0} of the embedding matrix is not unit-norm")]
    Unnormalized(usize),
    #[error("invalid split `{0}`")]
    InvalidSplit(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ZsdError>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl ToString,
    found: impl ToString,
) -> ZsdError {
    ZsdError::ShapeMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
