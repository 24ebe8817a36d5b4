use alloc::string::String;

/// Errors from ranking, gradient, model and training operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("ranking has no positive samples")]
    EmptyPositives,
    #[error("ranking has no negative samples")]
    EmptyNegatives,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite score at index {index}")]
    NonFiniteScore { index: usize },
    #[error("invalid label {0}; expected -1, 0 or 1")]
    InvalidLabel(i64),
    #[error("piecewise step half-width must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("precision reached 1 while interpolating")]
    DegeneratePrecision,
    #[error("unknown bound mode `{0}`")]
    InvalidMode(String),
    #[error("class index {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires a linear scorer")]
    NotLinear,
    #[error("training data contains no positive samples")]
    NoPositives,
    #[error("non-finite loss or weights at step {step}")]
    DivergenceDetected { step: usize },
    #[error("average AP-loss {average} exceeds bound {bound} at T = {horizon}")]
    BoundViolated {
        horizon: usize,
        average: f64,
        bound: f64,
    },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
