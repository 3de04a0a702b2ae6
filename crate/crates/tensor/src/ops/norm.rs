use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::ops::resolve_axis;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Layer normalization over a single `axis`, followed by the per-entry
    /// affine `γ·x̂ + β`. Variance is the biased (population) estimate.
    pub fn layer_norm(&self, axis: isize, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let axis = resolve_axis("layer_norm", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if p.shape() != [len] {
                return Err(TensorError::dim(
                    "layer_norm",
                    format!("axis {axis}"),
                    format!("{name} has shape {:?} but the normalized extent is {len}", p.shape()),
                ));
            }
        }
        let eps = T::from_f64(eps);
        let n = T::from_usize(len);
        let x = self.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mean = (0..len).map(|l| x[at(l)]).sum::<T>() / n;
                let var = (0..len).map(|l| (x[at(l)] - mean).powi(2)).sum::<T>() / n;
                let r = T::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for l in 0..len {
                    xhat[at(l)] = (x[at(l)] - mean) * r;
                }
            }
        }
        let (gm, bt) = (gamma.data(), beta.data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let l = (idx / inner) % len;
                v * gm[l] + bt[l]
            })
            .collect();
        let g_tensor = gamma.clone();
        Tensor::from_op(
            "layer_norm",
            data,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |_, g| {
                let gm = g_tensor.data();
                let mut gx = vec![T::zero(); g.len()];
                let mut ggamma = vec![T::zero(); len];
                let mut gbeta = vec![T::zero(); len];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for l in 0..len {
                            let d = g[at(l)] * gm[l];
                            mean_dxhat += d;
                            mean_dxhat_xhat += d * xhat[at(l)];
                            ggamma[l] += g[at(l)] * xhat[at(l)];
                            gbeta[l] += g[at(l)];
                        }
                        mean_dxhat /= n;
                        mean_dxhat_xhat /= n;
                        let r = inv_std[o * inner + i];
                        for l in 0..len {
                            let d = g[at(l)] * gm[l];
                            gx[at(l)] = r * (d - mean_dxhat - xhat[at(l)] * mean_dxhat_xhat);
                        }
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    fn affine(len: usize, g: f64, b: f64) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::full(&[len], g), Tensor::full(&[len], b))
    }

    #[test]
    fn constant_input_collapses_to_beta() {
        let x = Tensor::<f64>::full(&[2, 5], 3.25);
        let (g, b) = affine(5, 1.0, 0.0);
        let y = x.layer_norm(-1, &g, &b, 1e-6).unwrap();
        assert!(y.to_vec().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_point_normalization() {
        let x = Tensor::<f64>::from_f64(&[1.0, 3.0], &[1, 2]).unwrap();
        let (g, b) = affine(2, 1.0, 0.0);
        let y = x.layer_norm(-1, &g, &b, 1e-12).unwrap().to_vec();
        assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f64>::from_f64(&[0.2, -4.0, 9.0], &[3]).unwrap();
        let (g, b) = affine(3, 0.0, 7.0);
        assert_eq!(x.layer_norm(0, &g, &b, 1e-6).unwrap().to_vec(), vec![7.0; 3]);
    }

    #[test]
    fn normalizes_a_middle_axis() {
        // [N=1, C=3, L=2]: normalize over C independently per position
        let x = Tensor::<f64>::from_f64(&[1.0, 10.0, 2.0, 20.0, 3.0, 30.0], &[1, 3, 2]).unwrap();
        let (g, b) = affine(3, 1.0, 0.0);
        let y = x.layer_norm(1, &g, &b, 0.0).unwrap().to_vec();
        let s = (1.5f64).sqrt();
        for (got, want) in y.iter().zip([-s, -s, 0.0, 0.0, s, s]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn gamma_shape_checked() {
        let x = Tensor::<f64>::zeros(&[2, 4]);
        let (g, b) = affine(3, 1.0, 0.0);
        assert!(x.layer_norm(-1, &g, &b, 1e-6).is_err());
    }
}
