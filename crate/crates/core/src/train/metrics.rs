//! Accuracy, confusion matrices and the per-epoch log record.

use std::io::Write;

use emonext_tensor::no_grad;
use serde::{Deserialize, Serialize};

use crate::data::{eval_batches, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::{CLASS_NAMES, NUM_CLASSES};

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Samples whose true class is `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn precision(&self, class: usize) -> f64 {
        let predicted: u64 = (0..NUM_CLASSES).map(|t| self.counts[t][class]).sum();
        ratio(self.counts[class][class], predicted)
    }

    pub fn flat(&self) -> Vec<u64> {
        self.counts.iter().flatten().copied().collect()
    }

    /// Header of class names, then one row of counts per true class.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", CLASS_NAMES.join(","))?;
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One line of `metrics.jsonl`; field order is the on-disk key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_sa: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Validation confusion matrix, row-major `[true][predicted]`.
    pub confusion: Vec<u64>,
}

/// Inference-mode pass over `samples` without augmentation.
pub fn evaluate(model: &Model<f32>, samples: &[Sample], batch_size: usize) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate an empty split"));
    }
    let mut cm = ConfusionMatrix::default();
    for batch in eval_batches(samples, batch_size, model.config.input_size)? {
        let preds = no_grad(|| model.predict(&batch.images))?;
        for (p, &t) in preds.iter().zip(&batch.labels) {
            cm.record(t, p.class);
        }
    }
    Ok(cm)
}
