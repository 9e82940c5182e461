use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A reading or window does not match the declared stream schema.
    #[error("schema violation: {0}")]
    Schema(String),

    /// Malformed or non-finite input data.
    #[error("data error: {0}")]
    Data(String),

    /// Channels of unequal length handed to the windower.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Not enough (or unusable) calibration data.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An injected event that does not fit the scenario.
    #[error("range error: {0}")]
    Range(String),

    /// A metric that is undefined for the given input (e.g. AUC with one class).
    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::Dimension {
            expected,
            got,
            context,
        }
    }
}
