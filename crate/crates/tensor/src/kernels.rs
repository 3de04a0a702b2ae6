//! Dense kernels shared by several ops.
//!
//! Parallel loops split work over disjoint output rows; every output element
//! is reduced by a single task in a fixed order, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use crate::element::Element;

/// Work size below which kernels stay on the calling thread.
pub(crate) const PAR_THRESHOLD: usize = 1 << 15;

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    let row = |(i, out): (usize, &mut [T])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// Transpose of a row-major `rows×cols` matrix.
pub(crate) fn transpose<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Fills `out` in chunks of `chunk` elements, in parallel when the total
/// work (`out.len() * work_per_elem`) is large enough.
pub(crate) fn fill_chunks<T, F>(out: &mut [T], chunk: usize, work_per_elem: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if out.len().saturating_mul(work_per_elem) >= PAR_THRESHOLD && out.len() > chunk {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
