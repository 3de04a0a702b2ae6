use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{gemm, transpose};
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Matrix product of `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, m, k, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            (a, b) => {
                return Err(TensorError::dim(
                    "matmul",
                    "inner",
                    format!("cannot multiply {a:?} by {b:?}"),
                ))
            }
        };
        let (a, b) = (self.data(), other.data());
        let mut data = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            data.extend(gemm(&a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n], m, k, n));
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            data,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let (a, b) = (lhs.data(), rhs.data());
                let mut ga = Vec::with_capacity(batch * m * k);
                let mut gb = Vec::with_capacity(batch * k * n);
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bt = transpose(&b[i * k * n..(i + 1) * k * n], k, n);
                    ga.extend(gemm(gi, &bt, m, n, k));
                    let at = transpose(&a[i * m * k..(i + 1) * m * k], m, k);
                    gb.extend(gemm(&at, gi, k, m, n));
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Affine map over the last axis: `y = x·Wᵀ + b` with `W` of shape
    /// `[out, in]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let [out_f, in_f] = weight.shape() else {
            return Err(TensorError::dim("linear", "weight", format!("expected [out, in], got {:?}", weight.shape())));
        };
        let (out_f, in_f) = (*out_f, *in_f);
        if self.shape().last() != Some(&in_f) {
            return Err(TensorError::dim(
                "linear",
                format!("axis {}", self.rank() - 1),
                format!("input features {:?} do not match weight {:?}", self.shape(), weight.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [out_f] {
                return Err(TensorError::dim("linear", "bias", format!("expected [{out_f}], got {:?}", b.shape())));
            }
        }
        let rows = self.numel() / in_f;
        let wt = transpose(weight.data(), out_f, in_f);
        let mut data = gemm(self.data(), &wt, rows, in_f, out_f);
        if let Some(b) = bias {
            for row in data.chunks_mut(out_f) {
                row.iter_mut().zip(b.data()).for_each(|(y, &b)| *y += b);
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let has_bias = bias.is_some();
        let (x, w) = (self.clone(), weight.clone());
        Tensor::from_op(
            "linear",
            data,
            shape,
            inputs,
            Box::new(move |_, g| {
                let gx = gemm(g, w.data(), rows, out_f, in_f);
                let gt = transpose(g, rows, out_f);
                let gw = gemm(&gt, x.data(), out_f, rows, in_f);
                let mut grads = vec![Some(gx), Some(gw)];
                if has_bias {
                    let mut gb = vec![T::zero(); out_f];
                    for row in g.chunks(out_f) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn linear_hand_case() {
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0], &[1, 2]).unwrap();
        let w = Tensor::<f64>::from_f64(&[1.0, 1.0, 1.0, -1.0], &[2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]);
        assert_eq!(x.linear(&w, Some(&b)).unwrap().to_vec(), vec![3.0, -1.0]);
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let x = Tensor::<f64>::from_f64(&[0.3, -1.2, 4.0, 7.5, 0.0, -2.0], &[2, 3]).unwrap();
        let eye = Tensor::<f64>::from_f64(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]).unwrap();
        assert_eq!(x.linear(&eye, Some(&Tensor::zeros(&[3]))).unwrap().to_vec(), x.to_vec());
        let zero_w = Tensor::<f64>::zeros(&[1, 3]);
        let five = Tensor::<f64>::from_f64(&[5.0], &[1]).unwrap();
        assert_eq!(x.linear(&zero_w, Some(&five)).unwrap().to_vec(), vec![5.0, 5.0]);
    }

    #[test]
    fn linear_rejects_feature_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::<f64>::zeros(&[4, 2]);
        assert!(x.linear(&w, None).is_err());
    }

    #[test]
    fn batched_matmul() {
        let a = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1.0, 1.0, 2.0, 0.5], &[2, 2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.to_vec(), vec![3.0, 8.0]);
    }
}
