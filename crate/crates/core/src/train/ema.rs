//! Exponential moving average of the parameters.

use emonext_tensor::{Element, Tensor, TensorError};

use crate::error::Result;
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct EmaState<T: Element> {
    pub decay: f64,
    pub shadow: ParamStore<T>,
}

impl<T: Element> EmaState<T> {
    /// Shadow initialized to a detached copy of `params`.
    pub fn new(params: &ParamStore<T>, decay: f64) -> Self {
        let mut shadow = ParamStore::new();
        for (name, t) in params.iter() {
            shadow.insert(name, t.detach());
        }
        EmaState { decay, shadow }
    }

    /// `shadow ← decay·shadow + (1 − decay)·param`.
    pub fn update(&mut self, params: &ParamStore<T>) -> Result<()> {
        let d = self.decay;
        for (name, p) in params.iter() {
            let s = self.shadow.get(name)?;
            if s.shape() != p.shape() {
                return Err(TensorError::contract("ema_update", format!("shape of `{name}` changed")).into());
            }
            let data = s
                .data()
                .iter()
                .zip(p.data())
                .map(|(&a, &b)| T::from_f64(d * a.as_f64() + (1.0 - d) * b.as_f64()))
                .collect();
            let t = Tensor::from_vec(data, p.shape())?;
            self.shadow.replace(name, t)?;
        }
        Ok(())
    }
}
