//! Spatial transformer: a small convolutional localization network predicts
//! an affine matrix per image, which drives a bilinear resampling of that
//! image.

use emonext_tensor::{Conv2dOptions, Element, Tensor, TensorError};

use super::{join, Init, ParamSpec};
use crate::error::Result;
use crate::params::ParamStore;

/// Width of the hidden fully connected layer.
pub const STN_HIDDEN: usize = 32;
const CONV1_OUT: usize = 8;
const CONV2_OUT: usize = 10;
const KERNEL: usize = 5;

/// Per-image 2×3 affine matrices, stored as a `[N, 2, 3]` tensor.
#[derive(Clone, Debug)]
pub struct AffineParams<T: Element> {
    pub theta: Tensor<T>,
}

impl<T: Element> AffineParams<T> {
    pub const IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

    pub fn identity(n: usize) -> Self {
        Self::repeat(&Self::IDENTITY, n)
    }

    /// The same row-major 2×3 matrix for every batch element.
    pub fn repeat(theta: &[f64; 6], n: usize) -> Self {
        let v: Vec<f64> = (0..n).flat_map(|_| theta.iter().copied()).collect();
        AffineParams {
            theta: Tensor::from_f64(&v, &[n, 2, 3]).expect("valid theta shape"),
        }
    }

    pub fn batch_len(&self) -> usize {
        self.theta.shape()[0]
    }

    /// Row-major matrix of batch element `i`.
    pub fn matrix(&self, i: usize) -> [f64; 6] {
        let d = &self.theta.data()[i * 6..i * 6 + 6];
        std::array::from_fn(|k| d[k].as_f64())
    }
}

/// Spatial extent after conv(5) → pool(2) → conv(5) → pool(2).
pub fn localization_feature_side(input_size: usize) -> Option<usize> {
    let a = input_size.checked_sub(KERNEL - 1)? / 2;
    let b = a.checked_sub(KERNEL - 1)? / 2;
    (b >= 1).then_some(b)
}

/// Length of the flattened localization features for a square input.
pub fn localization_flat_dim(input_size: usize) -> Option<usize> {
    localization_feature_side(input_size).map(|s| CONV2_OUT * s * s)
}

#[derive(Clone, Debug)]
pub struct STNParams<T: Element> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

impl<T: Element> STNParams<T> {
    /// Parameter layout for `in_ch`-channel square inputs of side
    /// `input_size`. The last layer starts at zero weight and identity bias.
    pub fn specs(prefix: &str, in_ch: usize, input_size: usize) -> Result<Vec<ParamSpec>> {
        let flat = localization_flat_dim(input_size).ok_or_else(|| {
            crate::Error::Config(format!("input size {input_size} is too small for the localization network"))
        })?;
        let fan = |n: usize| Init::Uniform(1.0 / (n as f64).sqrt());
        let k2 = KERNEL * KERNEL;
        Ok(vec![
            ParamSpec::new(join(prefix, "conv1.weight"), &[CONV1_OUT, in_ch, KERNEL, KERNEL], fan(in_ch * k2)),
            ParamSpec::new(join(prefix, "conv1.bias"), &[CONV1_OUT], fan(in_ch * k2)),
            ParamSpec::new(join(prefix, "conv2.weight"), &[CONV2_OUT, CONV1_OUT, KERNEL, KERNEL], fan(CONV1_OUT * k2)),
            ParamSpec::new(join(prefix, "conv2.bias"), &[CONV2_OUT], fan(CONV1_OUT * k2)),
            ParamSpec::new(join(prefix, "fc1.weight"), &[STN_HIDDEN, flat], fan(flat)),
            ParamSpec::new(join(prefix, "fc1.bias"), &[STN_HIDDEN], fan(flat)),
            ParamSpec::new(join(prefix, "fc2.weight"), &[6, STN_HIDDEN], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "fc2.bias"), &[6], Init::Values(AffineParams::<T>::IDENTITY.to_vec())),
        ])
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&join(prefix, n)).cloned();
        Ok(STNParams {
            conv1_w: g("conv1.weight")?,
            conv1_b: g("conv1.bias")?,
            conv2_w: g("conv2.weight")?,
            conv2_b: g("conv2.bias")?,
            fc1_w: g("fc1.weight")?,
            fc1_b: g("fc1.bias")?,
            fc2_w: g("fc2.weight")?,
            fc2_b: g("fc2.bias")?,
        })
    }

    /// Smallest square input side the fc1 layer accepts.
    fn expected_input_side(&self) -> Option<usize> {
        let flat = self.fc1_w.shape()[1];
        (1..=4096).find(|&s| localization_flat_dim(s) == Some(flat))
    }
}

/// conv(5×5, 8) → maxpool 2 → ReLU → conv(5×5, 10) → maxpool 2 → ReLU →
/// flatten → fc(32) → ReLU → fc(6), reshaped to one 2×3 matrix per image.
pub fn localization_net<T: Element>(x: &Tensor<T>, p: &STNParams<T>) -> Result<AffineParams<T>> {
    let n = x.shape()[0];
    let h = x.conv2d(&p.conv1_w, Some(&p.conv1_b), Conv2dOptions::default())?;
    let h = h.max_pool2d(2)?.relu()?;
    let h = h.conv2d(&p.conv2_w, Some(&p.conv2_b), Conv2dOptions::default())?;
    let h = h.max_pool2d(2)?.relu()?;
    let flat = h.numel() / n;
    if flat != p.fc1_w.shape()[1] {
        let side = p.expected_input_side().map_or("?".to_string(), |s| s.to_string());
        return Err(TensorError::dim(
            "localization_net",
            "axis 2",
            format!("input {:?} does not match the {side}×{side} size the localization network was built for", x.shape()),
        )
        .into());
    }
    let h = h.reshape(&[n, flat])?.linear(&p.fc1_w, Some(&p.fc1_b))?.relu()?;
    let theta = h.linear(&p.fc2_w, Some(&p.fc2_b))?.reshape(&[n, 2, 3])?;
    Ok(AffineParams { theta })
}

/// Sampling grid of target size `out_h × out_w` for each matrix.
pub fn affine_grid<T: Element>(theta: &AffineParams<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    Ok(theta.theta.affine_grid(out_h, out_w)?)
}

/// Resamples `x` through the transform its localization network predicts.
pub fn stn_forward<T: Element>(x: &Tensor<T>, p: &STNParams<T>) -> Result<Tensor<T>> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let theta = localization_net(x, p)?;
    let grid = affine_grid(&theta, h, w)?;
    Ok(x.grid_sample_bilinear(&grid)?)
}
