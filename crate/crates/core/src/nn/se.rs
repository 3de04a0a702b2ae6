//! Squeeze-and-excitation channel gating.

use emonext_tensor::{Element, Tensor, TensorError};

use super::{join, Init, ParamSpec};
use crate::error::Result;
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct SEParams<T: Element> {
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

impl<T: Element> SEParams<T> {
    /// Bottleneck of `channels / reduction` units, at least one.
    pub fn specs(prefix: &str, channels: usize, reduction: usize) -> Vec<ParamSpec> {
        let hidden = (channels / reduction.max(1)).max(1);
        let w = Init::TruncNormal(0.02);
        vec![
            ParamSpec::new(join(prefix, "fc1.weight"), &[hidden, channels], w.clone()),
            ParamSpec::new(join(prefix, "fc1.bias"), &[hidden], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "fc2.weight"), &[channels, hidden], w),
            ParamSpec::new(join(prefix, "fc2.bias"), &[channels], Init::Constant(0.0)),
        ]
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&join(prefix, n)).cloned();
        Ok(SEParams {
            fc1_w: g("fc1.weight")?,
            fc1_b: g("fc1.bias")?,
            fc2_w: g("fc2.weight")?,
            fc2_b: g("fc2.bias")?,
        })
    }

    pub fn channels(&self) -> usize {
        self.fc1_w.shape()[1]
    }
}

/// Per-sample, per-channel gates in (0, 1), shaped `[N, C]`.
pub fn se_gates<T: Element>(x: &Tensor<T>, p: &SEParams<T>) -> Result<Tensor<T>> {
    let c = p.channels();
    if x.rank() != 4 || x.shape()[1] != c {
        return Err(TensorError::dim("se_block", "axis 1", format!("expected [N, {c}, H, W], got {:?}", x.shape())).into());
    }
    let n = x.shape()[0];
    let s = x.global_avg_pool()?.reshape(&[n, c])?;
    let z = s.linear(&p.fc1_w, Some(&p.fc1_b))?.relu()?;
    Ok(z.linear(&p.fc2_w, Some(&p.fc2_b))?.sigmoid()?)
}

/// Rescales each channel of `x` by its gate.
pub fn se_block<T: Element>(x: &Tensor<T>, p: &SEParams<T>) -> Result<Tensor<T>> {
    let gates = se_gates(x, p)?;
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let g = gates.reshape(&[n, c, 1, 1])?.broadcast_to(x.shape())?;
    Ok(x.mul(&g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_store;
    use crate::rng::StreamRng;

    fn params(c: usize, r: usize) -> SEParams<f64> {
        let store = init_store(&SEParams::<f64>::specs("se", c, r), &StreamRng::new(3));
        SEParams::from_store(&store, "se").unwrap()
    }

    #[test]
    fn zero_fc2_halves_everything() {
        let mut p = params(8, 4);
        p.fc2_w = Tensor::zeros(&[8, 2]);
        let x = Tensor::<f64>::from_f64(&(0..2 * 8 * 9).map(|i| i as f64 - 50.0).collect::<Vec<_>>(), &[2, 8, 3, 3]).unwrap();
        let y = se_block(&x, &p).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(*b, a * 0.5);
        }
    }

    #[test]
    fn gates_match_hand_computation() {
        let p = params(4, 2);
        let x = Tensor::<f64>::from_f64(&(0..4 * 4).map(|i| (i as f64).sin()).collect::<Vec<_>>(), &[1, 4, 2, 2]).unwrap();
        let g = se_gates(&x, &p).unwrap().to_vec();
        let s: Vec<f64> = (0..4).map(|c| x.data()[c * 4..c * 4 + 4].iter().sum::<f64>() / 4.0).collect();
        let z: Vec<f64> = (0..2)
            .map(|j| (p.fc1_b.data()[j] + (0..4).map(|c| p.fc1_w.data()[j * 4 + c] * s[c]).sum::<f64>()).max(0.0))
            .collect();
        for c in 0..4 {
            let a = p.fc2_b.data()[c] + (0..2).map(|j| p.fc2_w.data()[c * 2 + j] * z[j]).sum::<f64>();
            let want = 1.0 / (1.0 + (-a).exp());
            assert!((g[c] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_gates() {
        let mut p = params(8, 4);
        p.fc2_w = Tensor::zeros(&[8, 2]);
        let x = Tensor::<f64>::from_f64(&(0..8 * 4).map(|i| i as f64 * 0.1 - 1.0).collect::<Vec<_>>(), &[1, 8, 2, 2]).unwrap();
        p.fc2_b = Tensor::full(&[8], 40.0);
        let open = se_block(&x, &p).unwrap();
        assert!(x.data().iter().zip(open.data()).all(|(a, b)| (a - b).abs() < 1e-10));
        p.fc2_b = Tensor::full(&[8], -40.0);
        let shut = se_block(&x, &p).unwrap();
        assert!(shut.data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let p = params(8, 4);
        assert!(se_block(&Tensor::<f64>::zeros(&[1, 4, 2, 2]), &p).is_err());
    }

    #[test]
    fn bottleneck_never_empty() {
        assert_eq!(SEParams::<f64>::specs("x", 8, 16)[0].shape, vec![1, 8]);
        assert_eq!(SEParams::<f64>::specs("x", 768, 16)[0].shape, vec![48, 768]);
    }
}
