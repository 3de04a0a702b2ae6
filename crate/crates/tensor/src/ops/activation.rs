use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::element::Element;
use crate::error::Result;
use crate::kernels::split_axis;
use crate::ops::resolve_axis;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    pub fn relu(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v.max(T::zero())).collect();
        let x = self.clone();
        Tensor::from_op(
            "relu",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF written through `erf`.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(FRAC_1_SQRT_2);
        let data = self
            .data()
            .iter()
            .map(|&x| x * half * (T::one() + (x * inv_sqrt2).erf()))
            .collect();
        let x = self.clone();
        Tensor::from_op(
            "gelu",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * PI).sqrt());
                let gx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| {
                        let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                        let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                        g * (cdf + x * pdf)
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        let data = self
            .data()
            .iter()
            .map(|&x| {
                // split by sign so exp never overflows
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        Tensor::from_op(
            "sigmoid",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|out, g| {
                vec![Some(g.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect())]
            }),
        )
    }

    /// Softmax along `axis`, computed after subtracting the slice maximum.
    pub fn softmax(&self, axis: isize) -> Result<Tensor<T>> {
        let axis = resolve_axis("softmax", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - max).exp();
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
        Tensor::from_op(
            "softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |y, g| {
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Log of the softmax along `axis`, without forming the softmax first.
    pub fn log_softmax(&self, axis: isize) -> Result<Tensor<T>> {
        let axis = resolve_axis("log_softmax", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let total: T = (0..len).map(|l| (x[at(l)] - max).exp()).sum();
                let lse = max + total.ln();
                for l in 0..len {
                    out[at(l)] = x[at(l)] - lse;
                }
            }
        }
        Tensor::from_op(
            "log_softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |y, g| {
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let gsum: T = (0..len).map(|l| g[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = g[at(l)] - y[at(l)].exp() * gsum;
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

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(v, &[v.len()]).unwrap()
    }

    #[test]
    fn gelu_reference_points() {
        let y = t(&[0.0, 10.0]).gelu().unwrap().to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_reference_points() {
        let y = t(&[0.0, 40.0, 1.7, -1.7, -800.0]).sigmoid().unwrap().to_vec();
        assert_eq!(y[0], 0.5);
        assert!((y[1] - 1.0).abs() < 1e-12);
        assert!((y[3] - (1.0 - y[2])).abs() < 1e-15);
        assert!(y[4] >= 0.0 && y[4].is_finite());
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(t(&[0.0; 4]).softmax(0).unwrap().to_vec(), vec![0.25; 4]);
        let y = t(&[0.0, 2f64.ln()]).softmax(0).unwrap().to_vec();
        assert!((y[0] - 1.0 / 3.0).abs() < 1e-15 && (y[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t(&[1000.0, 1000.0]).softmax(0).unwrap().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = Tensor::<f64>::from_f64(&[0.0, 1.0, 0.0, 1.0], &[2, 2]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert_eq!(y, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = t(&[0.3, -2.0, 5.0, 1.1]);
        let a = x.log_softmax(0).unwrap().to_vec();
        let b = x.softmax(0).unwrap().to_vec();
        for (a, b) in a.iter().zip(b) {
            assert!((a - b.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_clamps() {
        assert_eq!(t(&[-1.0, 0.0, 2.0]).relu().unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
    }
}
