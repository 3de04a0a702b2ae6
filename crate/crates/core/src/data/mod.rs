//! FER2013 ingestion, augmentation and deterministic batching.

mod augment;
mod fer;
mod pgm;

pub use augment::{augment, augment_with, normalize, resize, AugmentParams, MAX_ROTATION_DEG, PAD};
pub use fer::{parse_csv, parse_reader, DatasetSummary, Sample, Split, IMAGE_PIXELS, IMAGE_SIDE};
pub use pgm::{encode_pgm, parse_pgm, read_pgm, GrayImage};

use emonext_tensor::{Element, Tensor};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Stream tags below the run seed.
const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// The `--split` choice of the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSelector {
    Train,
    Val,
    Test,
}

impl SplitSelector {
    pub fn split(self) -> Split {
        match self {
            SplitSelector::Train => Split::Training,
            SplitSelector::Val => Split::PublicTest,
            SplitSelector::Test => Split::PrivateTest,
        }
    }
}

pub fn select(samples: &[Sample], split: Split) -> Vec<Sample> {
    samples.iter().filter(|s| s.split == split).cloned().collect()
}

/// A stacked `[B, 1, S, S]` input with its labels.
#[derive(Clone, Debug)]
pub struct Batch<T: Element> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    /// Positions of the batch members in the sample slice.
    pub indices: Vec<usize>,
}

/// Resizes and normalizes one 48×48 image to the network input.
pub fn prepare(image: &[f32], input_size: usize) -> Vec<f32> {
    let mut v = resize(image, IMAGE_SIDE, input_size);
    normalize(&mut v);
    v
}

/// Batch iterator over a sample slice.
pub struct Batches<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    input_size: usize,
    /// `(seed, epoch)` when augmenting.
    augment: Option<(u64, u64)>,
    next: usize,
}

impl<'a> Batches<'a> {
    fn new(samples: &'a [Sample], batch_size: usize, input_size: usize, order: Vec<usize>, augment: Option<(u64, u64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("no samples to batch"));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Batches {
            samples,
            order,
            batch_size,
            input_size,
            augment,
            next: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Batch sizes in iteration order.
    pub fn sizes(&self) -> Vec<usize> {
        self.order.chunks(self.batch_size).map(<[usize]>::len).collect()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch<f32>;

    fn next(&mut self) -> Option<Batch<f32>> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        let s = self.input_size;
        let mut data = Vec::with_capacity(indices.len() * s * s);
        for &i in &indices {
            let img = &self.samples[i].image;
            match self.augment {
                Some((seed, epoch)) => {
                    let mut rng = StreamRng::derive(seed, &[AUGMENT_STREAM, epoch, i as u64]);
                    data.extend(prepare(&augment(img, &mut rng), s));
                }
                None => data.extend(prepare(img, s)),
            }
        }
        let images = Tensor::from_vec(data, &[indices.len(), 1, s, s]).expect("batch shape");
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Some(Batch { images, labels, indices })
    }
}

/// The epoch permutation, a pure function of `(seed, epoch)`.
pub fn permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut StreamRng::derive(seed, &[SHUFFLE_STREAM, epoch]));
    order
}

/// Shuffled, augmented training batches; the last partial batch is kept.
pub fn batches(samples: &[Sample], batch_size: usize, seed: u64, epoch: u64, input_size: usize) -> Result<Batches<'_>> {
    let order = permutation(samples.len(), seed, epoch);
    Batches::new(samples, batch_size, input_size, order, Some((seed, epoch)))
}

/// In-order batches without augmentation, for evaluation.
pub fn eval_batches(samples: &[Sample], batch_size: usize, input_size: usize) -> Result<Batches<'_>> {
    Batches::new(samples, batch_size, input_size, (0..samples.len()).collect(), None)
}
