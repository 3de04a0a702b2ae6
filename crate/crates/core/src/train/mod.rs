//! AdamW, cosine schedule, EMA, checkpoints and the training loop.

mod checkpoint;
mod ema;
mod metrics;
mod optim;
mod trainer;

pub use checkpoint::{decode, encode, load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointMeta, TrainState, MAGIC, VERSION};
pub use ema::EmaState;
pub use metrics::{evaluate, ConfusionMatrix, EpochMetrics};
pub use optim::{adamw_step, cosine_lr, decays, AdamWConfig, OptimState};
pub use trainer::{evaluate_state, train, DataSplits, TrainConfig, TrainOutcome};
