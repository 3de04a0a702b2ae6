use std::path::PathBuf;

use emonext_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config error: {0}")]
    Config(String),

    /// Bad input data; `row` is the 1-based data row when known.
    #[error("data error{}: {detail}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, detail: String },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {value} at step {step} (epoch {epoch})")]
    NonFinite { step: u64, epoch: usize, value: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn data(detail: impl Into<String>) -> Self {
        Error::Data {
            row: None,
            detail: detail.into(),
        }
    }

    pub fn at_row(row: usize, detail: impl Into<String>) -> Self {
        Error::Data {
            row: Some(row),
            detail: detail.into(),
        }
    }

    /// Collapses into a tensor error, for closures driven by the tensor
    /// crate's gradient checker.
    pub fn into_tensor_error(self) -> TensorError {
        match self {
            Error::Tensor(e) => e,
            other => TensorError::contract("emonext", other.to_string()),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
