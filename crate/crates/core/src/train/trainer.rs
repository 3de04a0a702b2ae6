//! The optimization loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use emonext_tensor::no_grad;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, CheckpointMeta, TrainState};
use super::ema::EmaState;
use super::metrics::{evaluate, ConfusionMatrix, EpochMetrics};
use super::optim::{adamw_step, cosine_lr, AdamWConfig, OptimState};
use crate::data::{batches, select, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{total_loss, Model};
use crate::rng::StreamRng;

/// Stream tag for stochastic-depth draws.
const DROP_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub ema_decay: f64,
    pub optim: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 1e-4,
            min_lr: 0.0,
            ema_decay: 0.999,
            optim: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// Training and validation samples.
#[derive(Clone, Debug)]
pub struct DataSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    /// Split the validation samples came from.
    pub val_split: Split,
}

impl DataSplits {
    /// Training rows train; PublicTest rows validate. Without any
    /// PublicTest rows the (un-augmented) training rows stand in.
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let train = select(samples, Split::Training);
        if train.is_empty() {
            return Err(Error::data("the data contains no Training rows"));
        }
        let val = select(samples, Split::PublicTest);
        Ok(if val.is_empty() {
            DataSplits {
                val: train.clone(),
                train,
                val_split: Split::Training,
            }
        } else {
            DataSplits {
                train,
                val,
                val_split: Split::PublicTest,
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<EpochMetrics>,
    pub best_val_acc: f64,
}

/// Runs `cfg.epochs` epochs. When `out_dir` is given, appends one line per
/// epoch to `metrics.jsonl` and maintains `best.emnx` and `last.emnx` there.
pub fn train(model: Model<f32>, data: &DataSplits, cfg: &TrainConfig, out_dir: Option<PathBuf>) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be at least 1".into()));
    }
    let Model { config, mut params } = model;
    let mut optim = OptimState::new(&params, cfg.optim);
    let mut ema = EmaState::new(&params, cfg.ema_decay);
    let per_epoch = data.train.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = per_epoch * cfg.epochs as u64;

    let mut log = match &out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.jsonl");
            Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
        }
        None => None,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::NEG_INFINITY;
    let mut step = 0u64;
    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        let (mut sum_total, mut sum_ce, mut sum_sa, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for batch in batches(&data.train, cfg.batch_size, cfg.seed, epoch as u64, config.input_size)? {
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.min_lr)?;
            let model = Model {
                config: config.clone(),
                params,
            };
            let mut drop_rng = StreamRng::derive(cfg.seed, &[DROP_STREAM, step]);
            let out = model.forward(&batch.images, Some(&mut drop_rng))?;
            let parts = total_loss(&out.logits, &batch.labels, &out.weights, config.lambda, config.label_smoothing)?;
            let value = parts.total.item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite { step, epoch, value });
            }
            parts.total.backward()?;
            params = model.params;
            adamw_step(&mut params, &mut optim, lr)?;
            ema.update(&params)?;
            params.zero_grad();

            let n = batch.labels.len();
            sum_total += value * n as f64;
            sum_ce += parts.ce.item() as f64 * n as f64;
            sum_sa += parts.sa.item() as f64 * n as f64;
            seen += n;
            step += 1;
        }

        let live = Model {
            config: config.clone(),
            params: params.clone(),
        };
        let train_cm = evaluate(&live, &data.train, cfg.batch_size)?;
        let shadow = Model {
            config: config.clone(),
            params: ema.shadow.clone(),
        };
        let val_cm: ConfusionMatrix = evaluate(&shadow, &data.val, cfg.batch_size)?;
        let m = EpochMetrics {
            epoch,
            step,
            lr,
            loss_total: sum_total / seen as f64,
            loss_ce: sum_ce / seen as f64,
            loss_sa: sum_sa / seen as f64,
            train_acc: train_cm.accuracy(),
            val_acc: val_cm.accuracy(),
            confusion: val_cm.flat(),
        };

        let state = TrainState {
            params: params.clone(),
            optim: Some(optim.clone()),
            ema: Some(ema.clone()),
            meta: CheckpointMeta {
                config: config.clone(),
                step,
                seed: cfg.seed,
                epoch,
                val_acc: m.val_acc,
                val_split: data.val_split.as_str().to_string(),
                optim: Some(cfg.optim),
                ema_decay: Some(cfg.ema_decay),
            },
        };
        if let (Some((w, path)), Some(dir)) = (log.as_mut(), out_dir.as_ref()) {
            let line = serde_json::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path.clone(), e))?;
            if m.val_acc > best {
                save_checkpoint(dir.join("best.emnx"), &state)?;
            }
            save_checkpoint(dir.join("last.emnx"), &state)?;
        }
        best = best.max(m.val_acc);
        history.push(m);
        if epoch + 1 == cfg.epochs {
            return Ok(TrainOutcome {
                state,
                history,
                best_val_acc: best,
            });
        }
    }
    unreachable!("epochs ≥ 1")
}

/// Accuracy of the weights a checkpoint evaluates with.
pub fn evaluate_state(state: &TrainState, samples: &[Sample], batch_size: usize) -> Result<ConfusionMatrix> {
    let model = Model::from_params(state.meta.config.clone(), state.eval_params().clone())?;
    no_grad(|| evaluate(&model, samples, batch_size))
}
