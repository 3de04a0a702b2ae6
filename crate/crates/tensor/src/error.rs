use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Shapes or axes that do not fit the operation.
    #[error("{op}: dimension error on {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },
    /// Calling convention violated (for example backward on a non-scalar).
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },
}

impl TensorError {
    pub fn dim(op: &'static str, axis: impl Into<String>, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Contract {
            op,
            detail: detail.into(),
        }
    }
}
