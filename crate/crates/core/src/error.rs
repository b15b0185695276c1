use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid configuration or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(ShapeMismatch),
    /// An operation was invoked out of order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    /// Training produced non-finite values.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMismatch {
    pub what: &'static str,
    pub expected: usize,
    pub actual: usize,
}

impl fmt::Display for ShapeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: expected {}, got {}", self.what, self.expected, self.actual)
    }
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape(ShapeMismatch { what, expected, actual })
    }
}
