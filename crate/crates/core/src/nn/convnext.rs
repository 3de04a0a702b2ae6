//! ConvNeXt stem, residual block and stage transition.

use emonext_tensor::{Conv2dOptions, Element, Tensor, TensorError};
use rand::Rng;

use super::{channel_norm, join, Init, ParamSpec, LN_EPS};
use crate::error::Result;
use crate::params::ParamStore;
use crate::rng::StreamRng;

const DW_KERNEL: usize = 7;
const EXPANSION: usize = 4;
const WEIGHT_STD: f64 = 0.02;
/// Starting value of the per-channel residual scale.
pub const LAYER_SCALE_INIT: f64 = 1e-6;

fn trunc() -> Init {
    Init::TruncNormal(WEIGHT_STD)
}

/// Non-overlapping `patch×patch` convolution followed by channel norm.
#[derive(Clone, Debug)]
pub struct StemParams<T: Element> {
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub norm_w: Tensor<T>,
    pub norm_b: Tensor<T>,
}

impl<T: Element> StemParams<T> {
    pub fn specs(prefix: &str, in_ch: usize, out_ch: usize, patch: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(join(prefix, "conv.weight"), &[out_ch, in_ch, patch, patch], trunc()),
            ParamSpec::new(join(prefix, "conv.bias"), &[out_ch], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "norm.weight"), &[out_ch], Init::Constant(1.0)),
            ParamSpec::new(join(prefix, "norm.bias"), &[out_ch], Init::Constant(0.0)),
        ]
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&join(prefix, n)).cloned();
        Ok(StemParams {
            conv_w: g("conv.weight")?,
            conv_b: g("conv.bias")?,
            norm_w: g("norm.weight")?,
            norm_b: g("norm.bias")?,
        })
    }
}

pub fn patchify_stem<T: Element>(x: &Tensor<T>, p: &StemParams<T>) -> Result<Tensor<T>> {
    let patch = p.conv_w.shape()[2];
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if h % patch != 0 || w % patch != 0 {
        return Err(TensorError::dim("patchify_stem", "spatial", format!("{h}×{w} is not divisible by patch size {patch}")).into());
    }
    let y = x.conv2d(&p.conv_w, Some(&p.conv_b), Conv2dOptions::default().stride(patch))?;
    Ok(channel_norm(&y, &p.norm_w, &p.norm_b)?)
}

/// Channel norm followed by a 2×2 stride-2 convolution.
#[derive(Clone, Debug)]
pub struct DownsampleParams<T: Element> {
    pub norm_w: Tensor<T>,
    pub norm_b: Tensor<T>,
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
}

impl<T: Element> DownsampleParams<T> {
    pub fn specs(prefix: &str, in_ch: usize, out_ch: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(join(prefix, "norm.weight"), &[in_ch], Init::Constant(1.0)),
            ParamSpec::new(join(prefix, "norm.bias"), &[in_ch], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "conv.weight"), &[out_ch, in_ch, 2, 2], trunc()),
            ParamSpec::new(join(prefix, "conv.bias"), &[out_ch], Init::Constant(0.0)),
        ]
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&join(prefix, n)).cloned();
        Ok(DownsampleParams {
            norm_w: g("norm.weight")?,
            norm_b: g("norm.bias")?,
            conv_w: g("conv.weight")?,
            conv_b: g("conv.bias")?,
        })
    }
}

pub fn downsample_layer<T: Element>(x: &Tensor<T>, p: &DownsampleParams<T>) -> Result<Tensor<T>> {
    if x.rank() == 4 && !(x.shape()[2].is_multiple_of(2) && x.shape()[3].is_multiple_of(2)) {
        return Err(TensorError::dim("downsample_layer", "spatial", format!("{:?} has odd spatial extent", x.shape())).into());
    }
    let y = channel_norm(x, &p.norm_w, &p.norm_b)?;
    Ok(y.conv2d(&p.conv_w, Some(&p.conv_b), Conv2dOptions::default().stride(2))?)
}

/// Depthwise 7×7 → LN → 4× pointwise expansion → GELU → projection →
/// per-channel scale, added back onto the input.
#[derive(Clone, Debug)]
pub struct BlockParams<T: Element> {
    pub dw_w: Tensor<T>,
    pub dw_b: Tensor<T>,
    pub norm_w: Tensor<T>,
    pub norm_b: Tensor<T>,
    pub pw1_w: Tensor<T>,
    pub pw1_b: Tensor<T>,
    pub pw2_w: Tensor<T>,
    pub pw2_b: Tensor<T>,
    pub layer_scale: Tensor<T>,
}

impl<T: Element> BlockParams<T> {
    pub fn specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
        let hidden = EXPANSION * dim;
        vec![
            ParamSpec::new(join(prefix, "dw.weight"), &[dim, 1, DW_KERNEL, DW_KERNEL], trunc()),
            ParamSpec::new(join(prefix, "dw.bias"), &[dim], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "norm.weight"), &[dim], Init::Constant(1.0)),
            ParamSpec::new(join(prefix, "norm.bias"), &[dim], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "pw1.weight"), &[hidden, dim], trunc()),
            ParamSpec::new(join(prefix, "pw1.bias"), &[hidden], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "pw2.weight"), &[dim, hidden], trunc()),
            ParamSpec::new(join(prefix, "pw2.bias"), &[dim], Init::Constant(0.0)),
            ParamSpec::new(join(prefix, "layer_scale"), &[dim], Init::Constant(LAYER_SCALE_INIT)),
        ]
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&join(prefix, n)).cloned();
        Ok(BlockParams {
            dw_w: g("dw.weight")?,
            dw_b: g("dw.bias")?,
            norm_w: g("norm.weight")?,
            norm_b: g("norm.bias")?,
            pw1_w: g("pw1.weight")?,
            pw1_b: g("pw1.bias")?,
            pw2_w: g("pw2.weight")?,
            pw2_b: g("pw2.bias")?,
            layer_scale: g("layer_scale")?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dw_w.shape()[0]
    }
}

/// Zeroes whole samples of the residual branch with probability `p` and
/// rescales survivors by `1/(1-p)`.
fn drop_path<T: Element>(branch: &Tensor<T>, p: f64, rng: &mut StreamRng) -> Result<Tensor<T>> {
    if p <= 0.0 {
        return Ok(branch.clone());
    }
    let n = branch.shape()[0];
    let per = branch.numel() / n;
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..n)
        .flat_map(|_| {
            let m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
            std::iter::repeat_n(m, per)
        })
        .collect();
    let mask = Tensor::from_f64(&mask, branch.shape())?;
    Ok(branch.mul(&mask)?)
}

/// One residual block on an NCHW tensor. `drop_prob` is only applied when
/// `rng` is given (training); at 1 or more every sample's branch is dropped
/// and the block returns its input unchanged.
pub fn convnext_block<T: Element>(
    x: &Tensor<T>,
    p: &BlockParams<T>,
    drop_prob: f64,
    rng: Option<&mut StreamRng>,
) -> Result<Tensor<T>> {
    let dim = p.dim();
    let shape = x.shape().to_vec();
    if shape.len() != 4 || shape[1] != dim {
        return Err(TensorError::dim("convnext_block", "axis 1", format!("expected [N, {dim}, H, W], got {shape:?}")).into());
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let opts = Conv2dOptions::default().padding(DW_KERNEL / 2).groups(dim);
    let y = x.conv2d(&p.dw_w, Some(&p.dw_b), opts)?;
    let y = y.permute(&[0, 2, 3, 1])?;
    let y = y.layer_norm(-1, &p.norm_w, &p.norm_b, LN_EPS)?;
    let y = y.linear(&p.pw1_w, Some(&p.pw1_b))?.gelu()?;
    let y = y.linear(&p.pw2_w, Some(&p.pw2_b))?;
    let gamma = p.layer_scale.reshape(&[1, 1, 1, dim])?.broadcast_to(&[n, h, w, dim])?;
    let y = y.mul(&gamma)?.permute(&[0, 3, 1, 2])?;
    let y = match rng {
        Some(_) if drop_prob >= 1.0 => return Ok(x.clone()),
        Some(r) => drop_path(&y, drop_prob, r)?,
        None => y,
    };
    Ok(x.add(&y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_store;

    fn block(dim: usize, seed: u64) -> BlockParams<f64> {
        let store = init_store(&BlockParams::<f64>::specs("b", dim), &StreamRng::new(seed));
        BlockParams::from_store(&store, "b").unwrap()
    }

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        Tensor::from_f64(&v, shape).unwrap()
    }

    #[test]
    fn preserves_shape() {
        let p = block(4, 0);
        let x = input(&[2, 4, 9, 9], 1);
        assert_eq!(convnext_block(&x, &p, 0.0, None).unwrap().shape(), &[2, 4, 9, 9]);
    }

    #[test]
    fn tiny_layer_scale_is_near_identity() {
        let p = block(4, 0);
        let x = input(&[1, 4, 8, 8], 2);
        let y = convnext_block(&x, &p, 0.0, None).unwrap();
        let max = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-4, "{max}");
    }

    #[test]
    fn zero_layer_scale_is_exact_identity() {
        let mut p = block(3, 5);
        p.layer_scale = Tensor::zeros(&[3]);
        let x = input(&[2, 3, 5, 5], 3);
        let y = convnext_block(&x, &p, 0.0, None).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
    }

    #[test]
    fn certain_drop_returns_input() {
        let mut p = block(3, 6);
        p.layer_scale = Tensor::ones(&[3]);
        let x = input(&[2, 3, 5, 5], 4);
        let mut rng = StreamRng::new(0);
        let y = convnext_block(&x, &p, 1.0, Some(&mut rng)).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
        // inference ignores the drop probability entirely
        let eval = convnext_block(&x, &p, 1.0, None).unwrap();
        assert_ne!(x.to_vec(), eval.to_vec());
    }

    #[test]
    fn drop_path_drops_whole_samples() {
        let mut p = block(3, 7);
        p.layer_scale = Tensor::ones(&[3]);
        let x = input(&[16, 3, 4, 4], 5);
        let full = convnext_block(&x, &p, 0.0, None).unwrap();
        let mut rng = StreamRng::new(11);
        let y = convnext_block(&x, &p, 0.5, Some(&mut rng)).unwrap();
        let per = 3 * 16;
        let (mut dropped, mut kept) = (0, 0);
        for s in 0..16 {
            let r = s * per..(s + 1) * per;
            let xs = &x.data()[r.clone()];
            let ys = &y.data()[r.clone()];
            let fs = &full.data()[r];
            if xs == ys {
                dropped += 1;
            } else {
                kept += 1;
                for i in 0..per {
                    let want = xs[i] + 2.0 * (fs[i] - xs[i]);
                    assert!((ys[i] - want).abs() < 1e-12);
                }
            }
        }
        assert!(dropped > 0 && kept > 0, "dropped {dropped}, kept {kept}");
    }

    #[test]
    fn rejects_channel_mismatch() {
        let p = block(4, 0);
        let x = input(&[1, 3, 8, 8], 0);
        let err = convnext_block(&x, &p, 0.0, None).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn stem_and_downsample_shapes() {
        let store = init_store(&StemParams::<f64>::specs("s", 3, 8, 4), &StreamRng::new(0));
        let stem = StemParams::from_store(&store, "s").unwrap();
        let y = patchify_stem(&input(&[2, 3, 16, 16], 0), &stem).unwrap();
        assert_eq!(y.shape(), &[2, 8, 4, 4]);
        // channel norm leaves every pixel with zero mean across channels
        for px in 0..16 {
            let m: f64 = (0..8).map(|c| y.data()[c * 16 + px]).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12);
        }
        let store = init_store(&DownsampleParams::<f64>::specs("d", 8, 16), &StreamRng::new(1));
        let ds = DownsampleParams::from_store(&store, "d").unwrap();
        assert_eq!(downsample_layer(&y, &ds).unwrap().shape(), &[2, 16, 2, 2]);
        assert!(patchify_stem(&input(&[1, 3, 10, 10], 0), &stem).is_err());
        assert!(downsample_layer(&input(&[1, 8, 3, 4], 0), &ds).is_err());
    }

    #[test]
    fn stem_on_constant_input() {
        let store = init_store(&StemParams::<f64>::specs("s", 1, 2, 4), &StreamRng::new(0));
        let mut stem = StemParams::from_store(&store, "s").unwrap();
        // channel 0 sums its patch, channel 1 takes one pixel
        let mut w = vec![1.0; 16];
        w.extend((0..16).map(|i| if i == 0 { 2.0 } else { 0.0 }));
        stem.conv_w = Tensor::from_f64(&w, &[2, 1, 4, 4]).unwrap();
        stem.conv_b = Tensor::from_f64(&[0.5, 0.0], &[2]).unwrap();
        let y = patchify_stem(&Tensor::full(&[1, 1, 48, 48], 0.25), &stem).unwrap();
        assert_eq!(y.shape(), &[1, 2, 12, 12]);
        // pre-norm values are 4.5 and 0.5 everywhere; LN maps the pair to ±1
        let (mean, var) = (2.5, 4.0);
        let want = [(4.5 - mean) / (var + LN_EPS).sqrt(), (0.5 - mean) / (var + LN_EPS).sqrt()];
        for c in 0..2 {
            assert!(y.data()[c * 144..(c + 1) * 144].iter().all(|v| (v - want[c]).abs() < 1e-12));
        }
    }

    #[test]
    fn matches_unfused_oracle() {
        // oracle works on plain slices, independent of the tensor kernels
        let (c, h, w) = (2, 4, 3);
        let mut p = block(c, 9);
        p.layer_scale = Tensor::from_f64(&[0.7, -1.3], &[2]).unwrap();
        let x = input(&[1, c, h, w], 8);
        let y = convnext_block(&x, &p, 0.0, None).unwrap().to_vec();
        let xd = x.data();
        let dw = p.dw_w.data();
        let mut conv = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut s = p.dw_b.data()[ch];
                    for a in 0..7 {
                        for b in 0..7 {
                            let (ii, jj) = (i as isize + a as isize - 3, j as isize + b as isize - 3);
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                s += dw[ch * 49 + a * 7 + b] * xd[(ch * h + ii as usize) * w + jj as usize];
                            }
                        }
                    }
                    conv[(ch * h + i) * w + j] = s;
                }
            }
        }
        let gelu = |v: f64| 0.5 * v * (1.0 + emonext_tensor::Element::erf(v / 2f64.sqrt()));
        for i in 0..h * w {
            let v: Vec<f64> = (0..c).map(|ch| conv[ch * h * w + i]).collect();
            let m = v.iter().sum::<f64>() / c as f64;
            let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / c as f64;
            let n: Vec<f64> = v.iter().enumerate().map(|(k, a)| (a - m) / (var + LN_EPS).sqrt() * p.norm_w.data()[k] + p.norm_b.data()[k]).collect();
            let hid: Vec<f64> = (0..4 * c)
                .map(|o| gelu(p.pw1_b.data()[o] + (0..c).map(|k| p.pw1_w.data()[o * c + k] * n[k]).sum::<f64>()))
                .collect();
            for ch in 0..c {
                let out = p.pw2_b.data()[ch] + (0..4 * c).map(|k| p.pw2_w.data()[ch * 4 * c + k] * hid[k]).sum::<f64>();
                let want = xd[ch * h * w + i] + p.layer_scale.data()[ch] * out;
                assert!((y[ch * h * w + i] - want).abs() < 1e-12);
            }
        }
    }
}
