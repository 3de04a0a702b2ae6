//! Ordered, named collection of parameter tensors.

use emonext_tensor::{Element, Tensor};
use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ParamStore<T: Element> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Replaces an existing entry, keeping its position.
    pub fn replace(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    /// Copy whose leaves track gradients or not.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.with_requires_grad(requires_grad)))
                .collect(),
        }
    }

    /// Element-type conversion (for example training weights to `f64` for
    /// gradient checking).
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| {
                    let data = v.data().iter().map(|x| U::from_f64(x.as_f64())).collect();
                    let t = Tensor::from_vec(data, v.shape()).expect("same shape");
                    (k.clone(), t.with_requires_grad(v.requires_grad()))
                })
                .collect(),
        }
    }

    /// Euclidean norm of each tensor's accumulated gradient (0 if none).
    pub fn grad_norms(&self) -> Vec<(String, f64)> {
        self.tensors
            .iter()
            .map(|(k, v)| {
                let n = v
                    .grad()
                    .map(|g| g.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt())
                    .unwrap_or(0.0);
                (k.clone(), n)
            })
            .collect()
    }
}
