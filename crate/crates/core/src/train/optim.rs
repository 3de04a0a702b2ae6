//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use emonext_tensor::{Element, Tensor, TensorError};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moments for every parameter, in store order.
#[derive(Clone, Debug)]
pub struct OptimState<T: Element> {
    pub config: AdamWConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Whether weight decay applies; off for biases, norms and scales.
    pub decay: Vec<bool>,
}

/// Matrices and kernels decay; vectors (biases, norm affine terms, layer
/// scales) do not.
pub fn decays(shape: &[usize]) -> bool {
    shape.len() >= 2
}

impl<T: Element> OptimState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        let (mut names, mut m, mut v, mut decay) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (name, t) in params.iter() {
            names.push(name.to_string());
            m.push(vec![T::zero(); t.numel()]);
            v.push(vec![T::zero(); t.numel()]);
            decay.push(decays(t.shape()));
        }
        OptimState {
            config,
            step: 0,
            names,
            m,
            v,
            decay,
        }
    }
}

/// One AdamW update of every parameter at learning rate `lr`, using the
/// gradients accumulated on the store's tensors (absent gradients count as
/// zero). Parameters are replaced by fresh gradient-tracking leaves.
pub fn adamw_step<T: Element>(params: &mut ParamStore<T>, state: &mut OptimState<T>, lr: f64) -> Result<()> {
    if params.len() != state.names.len() {
        return Err(TensorError::contract("adamw_step", format!("{} parameters but state for {}", params.len(), state.names.len())).into());
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let mut updated = Vec::with_capacity(params.len());
    for (i, (name, p)) in params.iter().enumerate() {
        if name != state.names[i] || p.numel() != state.m[i].len() {
            return Err(TensorError::contract("adamw_step", format!("state does not match parameter `{name}`")).into());
        }
        let grad = p.grad();
        let wd = if state.decay[i] { c.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data: Vec<T> = p
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let g = grad.as_ref().map_or(0.0, |g| g[k].as_f64());
                let mk = c.beta1 * m[k].as_f64() + (1.0 - c.beta1) * g;
                let vk = c.beta2 * v[k].as_f64() + (1.0 - c.beta2) * g * g;
                m[k] = T::from_f64(mk);
                v[k] = T::from_f64(vk);
                let mut x = x.as_f64();
                x -= lr * wd * x;
                x -= lr * (mk / bc1) / ((vk / bc2).sqrt() + c.eps);
                T::from_f64(x)
            })
            .collect();
        updated.push((name.to_string(), Tensor::from_vec(data, p.shape())?.with_requires_grad(true)));
    }
    for (name, t) in updated {
        params.replace(&name, t)?;
    }
    Ok(())
}

/// `min_lr + ½(base_lr − min_lr)(1 + cos(π·step/total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(TensorError::contract("cosine_lr", format!("step {step} outside 0..={total_steps}")).into());
    }
    let frac = step as f64 / total_steps as f64;
    Ok(min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(name: &str, v: &[f64], shape: &[usize]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::from_f64(v, shape).unwrap().with_requires_grad(true));
        s
    }

    fn cfg(wd: f64) -> AdamWConfig {
        AdamWConfig {
            weight_decay: wd,
            ..Default::default()
        }
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut s = store("w", &[0.3, -2.0], &[1, 2]);
        let mut st = OptimState::new(&s, cfg(0.0));
        adamw_step(&mut s, &mut st, 1e-3).unwrap();
        assert_eq!(s.get("w").unwrap().to_vec(), vec![0.3, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn decay_only_arithmetic() {
        let mut s = store("w", &[1.0], &[1, 1]);
        let mut st = OptimState::new(&s, cfg(0.1));
        adamw_step(&mut s, &mut st, 1e-4).unwrap();
        assert!((s.get("w").unwrap().item() - (1.0 - 1e-5)).abs() < 1e-12);
    }

    #[test]
    fn vectors_skip_decay() {
        let mut s = store("b", &[1.0], &[1]);
        let mut st = OptimState::new(&s, cfg(0.1));
        adamw_step(&mut s, &mut st, 1e-4).unwrap();
        assert_eq!(s.get("b").unwrap().item(), 1.0);
    }

    #[test]
    fn minimizes_square() {
        let mut s = store("p", &[1.0], &[1, 1]);
        let mut st = OptimState::new(&s, cfg(0.0));
        for _ in 0..200 {
            let p = s.get("p").unwrap().clone();
            p.square().unwrap().sum().backward().unwrap();
            adamw_step(&mut s, &mut st, 0.1).unwrap();
        }
        assert!(s.get("p").unwrap().item().abs() < 0.1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // bias correction makes the first step exactly lr·sign(g)·|g|/(|g|+eps')
        let mut s = store("p", &[2.0], &[1, 1]);
        let mut st = OptimState::new(&s, cfg(0.0));
        let p = s.get("p").unwrap().clone();
        p.square().unwrap().sum().backward().unwrap();
        adamw_step(&mut s, &mut st, 0.01).unwrap();
        let want = 2.0 - 0.01 * 4.0 / (4.0 + 1e-8);
        assert!((s.get("p").unwrap().item() - want).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 0.0).unwrap(), 1e-4);
        assert!(cosine_lr(100, 100, 1e-4, 0.0).unwrap().abs() < 1e-20);
        assert!((cosine_lr(50, 100, 1e-4, 0.0).unwrap() - 5e-5).abs() < 1e-12);
        assert!(cosine_lr(101, 100, 1e-4, 0.0).is_err());
        assert!(cosine_lr(0, 0, 1e-4, 0.0).is_err());
        let lrs: Vec<f64> = (0..=37).map(|s| cosine_lr(s, 37, 1e-3, 1e-5).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
