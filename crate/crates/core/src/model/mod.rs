//! Network assembly, presets and the training objective.

mod config;
mod emonext;
mod loss;

pub use config::{ModelConfig, Preset, PATCH, TOTAL_STRIDE};
pub use emonext::{AttentionOutput, Model, Prediction};
pub use loss::{attention_weights, cross_entropy_smoothed, sa_regularizer, total_loss, LossParts};
