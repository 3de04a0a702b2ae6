//! EmoNeXt: a Spatial Transformer front-end, ConvNeXt stages recalibrated by
//! Squeeze-and-Excitation blocks, and a classification loss regularized by
//! the variance of a self-attention map, trained on FER2013-format data.
//!
//! Module map:
//! - [`nn`]: the parameterized building blocks (STN, ConvNeXt block, SE
//!   block, patchify stem, downsampling).
//! - [`model`]: configuration presets, network assembly, attention head and
//!   losses.
//! - [`data`]: FER2013 CSV ingestion, augmentation and batching.
//! - [`train`]: AdamW, cosine schedule, EMA, checkpoints and the training
//!   loop.
//! - [`gradcheck`]: the finite-difference verification suite.

pub mod data;
mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod train;

pub use emonext_tensor as tensor;
pub use error::{Error, Result};
pub use model::{ModelConfig, Preset};
pub use params::ParamStore;
pub use rng::StreamRng;

/// Class names in label order 0..6.
pub const CLASS_NAMES: [&str; 7] = ["angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"];
pub const NUM_CLASSES: usize = 7;
