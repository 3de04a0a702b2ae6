//! Differentiable primitives. Each op computes its forward value eagerly and
//! registers a backward rule through [`crate::Tensor::from_op`].

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod norm;
pub mod reduce;
pub mod sample;
pub mod shape;

use crate::error::{Result, TensorError};

/// Resolves a possibly negative axis against `rank`.
pub(crate) fn resolve_axis(op: &'static str, axis: isize, rank: usize) -> Result<usize> {
    let resolved = if axis < 0 { axis + rank as isize } else { axis };
    if resolved < 0 || resolved as usize >= rank {
        return Err(TensorError::dim(
            op,
            format!("axis {axis}"),
            format!("out of range for rank {rank}"),
        ));
    }
    Ok(resolved as usize)
}
