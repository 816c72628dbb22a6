//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Non-finite values or an undefined numeric operation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration or hyperparameter.
    #[error("config error: {0}")]
    Config(String),

    /// An index (class id, token id, axis) is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A metric is undefined for the given input (e.g. AUROC with one class).
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// An API contract was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
