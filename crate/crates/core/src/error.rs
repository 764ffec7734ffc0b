use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature index {index} out of range for a model with {n_features} features")]
    FeatureOutOfRange { index: usize, n_features: usize },

    #[error(
        "filtering removed every example of one class (class 0: {class0}, class 1: {class1}); a larger k is infeasible"
    )]
    EmptyClass { class0: usize, class1: usize },

    #[error("every lambda candidate exceeds the noise budget {budget}: nonzero shift fractions {fractions:?}")]
    BudgetExhausted { budget: f64, fractions: Vec<f64> },

    #[error("model file: {0}")]
    ModelFile(String),
}
