use thiserror::Error;

/// Errors raised by the pure analysis layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("all {0} agent answers failed to parse; record abstains")]
    Abstain(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector at index {0}")]
    ZeroNorm(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("layout {layout}: missing required input `{field}`")]
    MissingFeature { layout: String, field: &'static str },

    #[error("layout mismatch: expected {expected}, got {actual}")]
    LayoutMismatch { expected: String, actual: String },

    #[error("non-finite value in feature column {column}, row {row}")]
    NonFinite { row: usize, column: usize },

    #[error("insufficient class counts: {positives} positive / {negatives} negative, need {required} each")]
    InsufficientClasses {
        positives: usize,
        negatives: usize,
        required: usize,
    },

    #[error("undefined metric: {0}")]
    Undefined(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
