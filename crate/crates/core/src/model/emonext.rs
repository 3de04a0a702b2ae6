//! The assembled network: STN → patchify stem → four ConvNeXt stages, each
//! closed by an SE block → self-attention head → classifier.

use emonext_tensor::{no_grad, Element, Tensor, TensorError};

use super::config::{ModelConfig, PATCH};
use super::loss::attention_weights;
use crate::error::{Error, Result};
use crate::nn::{
    convnext_block, downsample_layer, init_store, patchify_stem, se_block, stn_forward, BlockParams, DownsampleParams,
    SEParams, STNParams, StemParams, LN_EPS,
};
use crate::params::ParamStore;
use crate::rng::StreamRng;

#[derive(Clone, Debug)]
pub struct AttentionOutput<T: Element> {
    /// `[N, num_classes]`
    pub logits: Tensor<T>,
    /// `[N, T, T]`, row-stochastic.
    pub weights: Tensor<T>,
    /// NCHW shape after each stage's SE block.
    pub stage_shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Element> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Element> Model<T> {
    /// Freshly initialized network.
    pub fn build(config: ModelConfig, rng: &StreamRng) -> Result<Self> {
        let specs = config.param_specs()?;
        let params = init_store(&specs, rng);
        Ok(Model { config, params })
    }

    /// Wraps existing parameters, checking that names and shapes match the
    /// configuration. Reports the first offending tensor.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        for spec in config.param_specs()? {
            let t = params.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: spec.name,
                    expected: spec.shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(Model { config, params })
    }

    /// Runs the network on `[N, in_channels, S, S]` input. Passing `rng`
    /// selects training mode (stochastic depth active).
    pub fn forward(&self, x: &Tensor<T>, rng: Option<&mut StreamRng>) -> Result<AttentionOutput<T>> {
        let cfg = &self.config;
        let s = cfg.input_size;
        match x.shape() {
            [_, c, h, w] if *c == cfg.in_channels && *h == s && *w == s => {}
            other => {
                return Err(TensorError::dim(
                    "forward",
                    "input",
                    format!("expected [N, {}, {s}, {s}], got {other:?}", cfg.in_channels),
                )
                .into())
            }
        }
        let p = &self.params;
        let n = x.shape()[0];
        let mut h = stn_forward(x, &STNParams::from_store(p, "stn")?)?;
        h = patchify_stem(&h, &StemParams::from_store(p, "stem")?)?;
        let rates = cfg.drop_rates();
        let mut k = 0;
        let mut stage_shapes = Vec::with_capacity(4);
        for i in 0..4 {
            for j in 0..cfg.blocks[i] {
                let bp = BlockParams::from_store(p, &format!("stages.{i}.blocks.{j}"))?;
                let mut block_rng = rng.as_deref().map(|r| r.split(k as u64));
                h = convnext_block(&h, &bp, rates[k], block_rng.as_mut())?;
                k += 1;
            }
            h = se_block(&h, &SEParams::from_store(p, &format!("stages.{i}.se"))?)?;
            stage_shapes.push(h.shape().to_vec());
            if i < 3 {
                h = downsample_layer(&h, &DownsampleParams::from_store(p, &format!("downsample.{i}"))?)?;
            }
        }
        // advance the caller's stream so consecutive calls differ
        if let Some(r) = rng {
            *r = r.split(u64::MAX);
        }
        let (c, t) = (h.shape()[1], h.shape()[2] * h.shape()[3]);
        let tokens = h.reshape(&[n, c, t])?.permute(&[0, 2, 1])?;
        let weights = attention_weights(&tokens, p.get("head.q.weight")?, p.get("head.k.weight")?)?;
        let pooled = weights.matmul(&tokens)?.mean_axis(1, false)?;
        let normed = pooled.layer_norm(-1, p.get("head.norm.weight")?, p.get("head.norm.bias")?, LN_EPS)?;
        let logits = normed.linear(p.get("head.fc.weight")?, Some(p.get("head.fc.bias")?))?;
        Ok(AttentionOutput {
            logits,
            weights,
            stage_shapes,
        })
    }

    /// Inference-mode logits without building a tape.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        no_grad(|| Ok(self.forward(x, None)?.logits))
    }

    /// Class and softmax probabilities for each image of the batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<Prediction>> {
        let logits = self.logits(x)?;
        Ok(predictions(&logits))
    }

    pub fn patch(&self) -> usize {
        PATCH
    }
}

/// Argmax (lowest index on ties) and softmax of each row of `[N, K]` logits.
pub fn predictions<T: Element>(logits: &Tensor<T>) -> Vec<Prediction> {
    let k = logits.shape()[1];
    logits
        .to_f64_vec()
        .chunks(k)
        .map(|row| {
            let class = argmax(row);
            let m = row[class];
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            Prediction {
                class,
                probabilities: e.iter().map(|v| v / z).collect(),
            }
        })
        .collect()
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
