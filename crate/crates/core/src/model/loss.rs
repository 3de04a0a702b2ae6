//! Attention head scoring and the training objective.

use emonext_tensor::{Element, Tensor, TensorError};

use crate::error::{Error, Result};

/// Row-stochastic attention `softmax(Q·Kᵀ/√d)` over tokens `[N, T, C]`,
/// with `Q = tokens·q_projᵀ` and `K = tokens·k_projᵀ`.
pub fn attention_weights<T: Element>(tokens: &Tensor<T>, q_proj: &Tensor<T>, k_proj: &Tensor<T>) -> Result<Tensor<T>> {
    let d = q_proj.shape()[0];
    if d == 0 || k_proj.shape()[0] != d {
        return Err(TensorError::dim("attention_weights", "d", format!("q {:?} / k {:?}", q_proj.shape(), k_proj.shape())).into());
    }
    let q = tokens.linear(q_proj, None)?;
    let k = tokens.linear(k_proj, None)?;
    let scores = q.matmul(&k.permute(&[0, 2, 1])?)?;
    let scores = scores.mul_scalar(T::from_f64(1.0 / (d as f64).sqrt()))?;
    Ok(scores.softmax(-1)?)
}

/// Population variance of all `T²` entries of each sample's attention
/// matrix, averaged over the batch. Zero exactly when attention is uniform.
pub fn sa_regularizer<T: Element>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, per) = match w.shape() {
        [n, a, b] if a == b && *n > 0 && *a > 0 => (*n, a * b),
        s => return Err(TensorError::dim("sa_regularizer", "shape", format!("expected [N, T, T], got {s:?}")).into()),
    };
    // Two passes around a mean accumulated relative to the first entry:
    // identical entries give a mean equal to them and exactly zero.
    let mut total = T::zero();
    let mut means = Vec::with_capacity(n);
    for s in w.data().chunks(per) {
        let mean = s[0] + s.iter().map(|&v| v - s[0]).sum::<T>() / T::from_usize(per);
        total += s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::from_usize(per);
        means.push(mean);
    }
    let value = total / T::from_usize(n);
    let input = w.clone();
    Ok(Tensor::from_op(
        "sa_regularizer",
        vec![value],
        vec![1],
        vec![w.clone()],
        Box::new(move |_, g| {
            let scale = g[0] * T::from_f64(2.0) / T::from_usize(per * n);
            let grad = input
                .data()
                .chunks(per)
                .zip(&means)
                .flat_map(|(s, &m)| s.iter().map(move |&v| scale * (v - m)))
                .collect();
            vec![Some(grad)]
        }),
    )?)
}

/// Mean over the batch of `−Σ_c q_c log p_c`, where `q` mixes the one-hot
/// target with the uniform distribution by `epsilon`.
pub fn cross_entropy_smoothed<T: Element>(logits: &Tensor<T>, targets: &[usize], epsilon: f64) -> Result<Tensor<T>> {
    let (n, k) = match logits.shape() {
        [n, k] if *n == targets.len() && *n > 0 => (*n, *k),
        s => {
            return Err(TensorError::dim("cross_entropy_smoothed", "axis 0", format!("logits {s:?} for {} targets", targets.len())).into())
        }
    };
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(Error::data(format!("target {t} of sample {i} is outside 0..{}", k - 1)));
    }
    let off = epsilon / k as f64;
    let q: Vec<f64> = targets
        .iter()
        .flat_map(|&t| (0..k).map(move |c| if c == t { 1.0 - epsilon + off } else { off }))
        .collect();
    let q = Tensor::from_f64(&q, &[n, k])?;
    let logp = logits.log_softmax(-1)?;
    Ok(q.mul(&logp)?.sum().mul_scalar(T::from_f64(-1.0 / n as f64))?)
}

#[derive(Clone, Debug)]
pub struct LossParts<T: Element> {
    pub total: Tensor<T>,
    pub ce: Tensor<T>,
    pub sa: Tensor<T>,
}

/// `CE + λ·SA`. With λ = 0 the total is the cross-entropy tensor itself.
pub fn total_loss<T: Element>(logits: &Tensor<T>, targets: &[usize], w: &Tensor<T>, lambda: f64, epsilon: f64) -> Result<LossParts<T>> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let ce = cross_entropy_smoothed(logits, targets, epsilon)?;
    let sa = sa_regularizer(w)?;
    let total = if lambda == 0.0 { ce.clone() } else { combine(&ce, &sa, lambda)? };
    Ok(LossParts { total, ce, sa })
}

fn combine<T: Element>(ce: &Tensor<T>, sa: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    Ok(ce.add(&sa.mul_scalar(T::from_f64(lambda))?)?)
}
