//! Central finite-difference verification of analytic gradients.
//!
//! Always runs in `f64`: with `eps = 1e-4` the truncation error of the
//! central difference is around `1e-8` relative, far below the `1e-4`
//! acceptance threshold, whereas `f32` round-off alone would exceed it.

pub mod suite;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tensor::{no_grad, Tensor};

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Element responsible for `max_rel_error`.
    pub worst: Option<Mismatch>,
    /// Number of elements compared.
    pub checked: usize,
    /// Elements passed over because the function is not smooth within the
    /// difference stencil (see [`GradCheck::skip_nonsmooth`]).
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Compare at most this many randomly chosen elements per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
    /// Relative disagreement between the `eps` and `eps/2` differences
    /// above which an element is treated as sitting on a kink.
    pub smooth_tol: Option<f64>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-4,
            max_per_input: None,
            seed: 0,
            smooth_tol: None,
        }
    }
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        GradCheck {
            eps,
            ..Default::default()
        }
    }

    pub fn sampled(mut self, max_per_input: usize, seed: u64) -> Self {
        self.max_per_input = Some(max_per_input);
        self.seed = seed;
        self
    }

    /// Skips elements where halving the step moves the central difference
    /// by more than `tol` relative: a ReLU or pooling tie inside the stencil.
    /// The test looks only at function values, so it cannot mask a wrong
    /// backward rule; it only thins out the compared elements.
    pub fn skip_nonsmooth(mut self, tol: f64) -> Self {
        self.smooth_tol = Some(tol);
        self
    }

    /// Compares the backward-pass gradient of scalar `f` at `inputs`
    /// against central differences.
    pub fn run<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    {
        let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
        let loss = f(&leaves)?;
        if loss.numel() != 1 {
            return Err(TensorError::contract(
                "grad_check",
                format!("function must be scalar-valued, got shape {:?}", loss.shape()),
            ));
        }
        loss.backward()?;
        let analytic: Vec<Vec<f64>> = leaves
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
        };
        let mut values: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let elements: Vec<usize> = match self.max_per_input {
                Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
                _ => (0..n).collect(),
            };
            for e in elements {
                let mut diff = |h: f64| -> Result<f64> {
                    let mut data = input.to_vec();
                    data[e] += h;
                    values[i] = Tensor::from_vec(data.clone(), input.shape())?;
                    let plus = no_grad(|| f(&values))?.item();
                    data[e] -= 2.0 * h;
                    values[i] = Tensor::from_vec(data, input.shape())?;
                    let minus = no_grad(|| f(&values))?.item();
                    Ok((plus - minus) / (2.0 * h))
                };
                let numeric = diff(self.eps)?;
                if let Some(tol) = self.smooth_tol {
                    if relative_error(numeric, diff(self.eps / 2.0)?) > tol {
                        report.skipped += 1;
                        continue;
                    }
                }
                let err = relative_error(analytic[i][e], numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some(Mismatch {
                        input: i,
                        element: e,
                        analytic: analytic[i][e],
                        numeric,
                    });
                }
            }
            values[i] = input.detach();
        }
        Ok(report)
    }
}

/// Maximum relative error between analytic and central-difference
/// gradients of scalar `f` over every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    Ok(GradCheck::new(eps).run(f, inputs)?.max_rel_error)
}
