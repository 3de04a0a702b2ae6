//! Parameterized building blocks.
//!
//! Every block describes its parameters as a list of [`ParamSpec`]s under a
//! name prefix; [`init_store`] materializes them and each block's
//! `*Params::from_store` picks its tensors back out by name.

mod convnext;
mod se;
mod stn;

pub use convnext::{convnext_block, downsample_layer, patchify_stem, BlockParams, DownsampleParams, StemParams};
pub use se::{se_block, se_gates, SEParams};
pub use stn::{affine_grid, localization_flat_dim, localization_net, stn_forward, AffineParams, STNParams, STN_HIDDEN};

use emonext_tensor::{Element, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::params::ParamStore;
use crate::rng::StreamRng;

/// Epsilon used by every layer norm in the network.
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Normal with the given std, redrawn outside ±2 std.
    TruncNormal(f64),
    /// Uniform on ±bound.
    Uniform(f64),
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Creates every tensor in `specs` as a gradient-tracking leaf. Tensor `i`
/// draws from its own child stream of `rng`, so values do not depend on
/// which other tensors exist before it.
pub fn init_store<T: Element>(specs: &[ParamSpec], rng: &StreamRng) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for (i, spec) in specs.iter().enumerate() {
        let mut r = rng.split(i as u64);
        let n = spec.numel();
        let data: Vec<f64> = match &spec.init {
            Init::TruncNormal(std) => (0..n)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(&mut r);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect(),
            Init::Uniform(b) => (0..n).map(|_| r.random_range(-b..=*b)).collect(),
            Init::Constant(c) => vec![*c; n],
            Init::Values(v) => {
                assert_eq!(v.len(), n, "init values for {}", spec.name);
                v.clone()
            }
        };
        let t = Tensor::<T>::from_f64(&data, &spec.shape)
            .expect("param spec shape")
            .with_requires_grad(true);
        store.insert(spec.name.clone(), t);
    }
    store
}

/// Layer norm over the channel axis of an NCHW tensor.
pub(crate) fn channel_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> emonext_tensor::Result<Tensor<T>> {
    x.layer_norm(1, gamma, beta, LN_EPS)
}
