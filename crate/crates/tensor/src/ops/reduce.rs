use crate::element::Element;
use crate::error::Result;
use crate::kernels::split_axis;
use crate::ops::resolve_axis;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![total],
            vec![1],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0]; n])]),
        )
        .expect("sum of a valid tensor")
    }

    /// Arithmetic mean of all elements as a one-element tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel());
        let total: T = self.data().iter().copied().sum();
        let len = self.numel();
        Tensor::from_op(
            "mean",
            vec![total / n],
            vec![1],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0] / n; len])]),
        )
        .expect("mean of a valid tensor")
    }

    /// Sum along `axis`; the axis is kept with extent 1 when `keepdim`.
    pub fn sum_axis(&self, axis: isize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce_axis("sum_axis", axis, keepdim, false)
    }

    /// Mean along `axis`; the axis is kept with extent 1 when `keepdim`.
    pub fn mean_axis(&self, axis: isize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce_axis("mean_axis", axis, keepdim, true)
    }

    fn reduce_axis(&self, op: &'static str, axis: isize, keepdim: bool, mean: bool) -> Result<Tensor<T>> {
        let axis = resolve_axis(op, axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let scale = if mean { T::one() / T::from_usize(len) } else { T::one() };
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
        }
        Tensor::from_op(
            op,
            out,
            shape,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d = s * scale;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn axis_reductions() {
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let s0 = x.sum_axis(0, false).unwrap();
        assert_eq!(s0.shape(), &[3]);
        assert_eq!(s0.to_vec(), vec![5.0, 7.0, 9.0]);
        let m1 = x.mean_axis(-1, true).unwrap();
        assert_eq!(m1.shape(), &[2, 1]);
        assert_eq!(m1.to_vec(), vec![2.0, 5.0]);
        assert_eq!(x.mean().item(), 3.5);
        assert!(x.sum_axis(2, false).is_err());
    }
}
