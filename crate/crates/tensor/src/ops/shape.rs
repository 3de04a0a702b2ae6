use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::resolve_axis;
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every element of `out_shape` (row-major), the flat index it reads
/// from in a source with `src_strides` laid out along `out_shape`'s axes.
fn gather_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        idx.push(offset);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            offset += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    idx
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::dim(
                "reshape",
                "shape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::dim(
                "permute",
                "perm",
                format!("{perm:?} is not a permutation of {rank} axes"),
            ));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let idx = gather_index(&out_shape, &src_strides);
        let x = self.data();
        let data = idx.iter().map(|&i| x[i]).collect();
        let n = self.numel();
        Tensor::from_op(
            "permute",
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gx = vec![T::zero(); n];
                for (&i, &gv) in idx.iter().zip(g) {
                    gx[i] = gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Repeats extent-1 axes to reach `shape` (same rank required).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.len() != self.rank() {
            return Err(TensorError::dim(
                "broadcast_to",
                "rank",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        for (axis, (&s, &d)) in self.shape().iter().zip(shape).enumerate() {
            if s != d && s != 1 {
                return Err(TensorError::dim(
                    "broadcast_to",
                    format!("axis {axis}"),
                    format!("cannot expand extent {s} to {d}"),
                ));
            }
        }
        let in_strides = strides(self.shape());
        let src_strides: Vec<usize> = in_strides
            .iter()
            .zip(self.shape())
            .map(|(&st, &s)| if s == 1 { 0 } else { st })
            .collect();
        let idx = gather_index(shape, &src_strides);
        let x = self.data();
        let data = idx.iter().map(|&i| x[i]).collect();
        let n = self.numel();
        Tensor::from_op(
            "broadcast_to",
            data,
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gx = vec![T::zero(); n];
                for (&i, &gv) in idx.iter().zip(g) {
                    gx[i] += gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor<T>], axis: isize) -> Result<Tensor<T>> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::contract("concat", "no tensors given"))?;
        let axis = resolve_axis("concat", axis, first.rank())?;
        for t in tensors {
            if t.rank() != first.rank()
                || t.shape().iter().zip(first.shape()).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::dim(
                    "concat",
                    format!("axis {axis}"),
                    format!("{:?} incompatible with {:?}", t.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &l) in tensors.iter().zip(&lens) {
                data.extend_from_slice(&t.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Tensor::from_op(
            "concat",
            data,
            shape,
            tensors.to_vec(),
            Box::new(move |_, g| {
                let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gi, &l) in grads.iter_mut().zip(&lens) {
                        gi.extend_from_slice(&g[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        )
    }
}
