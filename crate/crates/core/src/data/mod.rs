//! Datasets and checkpoint persistence.

pub mod checkpoint;
pub mod cifar;
pub mod idx;
pub mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use cifar::{load_cifar10_bin, load_cifar10_dir};
pub use idx::{load_mnist_dir, load_mnist_idx};
pub use synth::{synth_redundant, SynthSpec};

/// Fraction of the training pool carved out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// A set of equally shaped samples with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// `(channels, height, width)` of one sample.
    pub sample_shape: [usize; 3],
    /// Samples stored back to back, each `c*h*w` values.
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(sample_shape: [usize; 3], images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let per = sample_shape.iter().product::<usize>();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::Shape(format!(
                "{} values cannot hold {} samples of shape {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            sample_shape,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.sample_len();
        &self.images[i * per..(i + 1) * per]
    }

    /// Gathers the given samples into an `(n, c, h, w)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.sample_shape;
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Split {
        let mut images = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            images.extend_from_slice(self.sample(i));
        }
        Split {
            sample_shape: self.sample_shape,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Appends the samples of `other` (same sample shape).
    pub fn extend(&mut self, other: Split) -> Result<()> {
        if other.sample_shape != self.sample_shape {
            return Err(Error::Shape(format!(
                "cannot concatenate samples of shape {:?} onto {:?}",
                other.sample_shape, self.sample_shape
            )));
        }
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        Ok(())
    }

    /// Per-class sample counts.
    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut hist = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                hist[l] += 1;
            }
        }
        hist
    }
}

/// Where a dataset came from and how it was preprocessed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub normalization: String,
    pub split_seed: u64,
}

/// Train / validation / test splits of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHandle {
    pub train: Split,
    pub validation: Split,
    pub test: Split,
    pub class_count: usize,
    pub provenance: Provenance,
    /// Positions of the validation samples within the original training pool.
    pub validation_indices: Vec<usize>,
}

impl DatasetHandle {
    /// Carves a seed-deterministic validation split off `pool`.
    pub fn from_pool(pool: Split, test: Split, class_count: usize, split_seed: u64, source: impl Into<String>, normalization: impl Into<String>) -> Result<Self> {
        if pool.sample_shape != test.sample_shape {
            return Err(Error::Shape(format!(
                "train samples {:?} and test samples {:?} differ in shape",
                pool.sample_shape, test.sample_shape
            )));
        }
        if let Some(&bad) = pool.labels.iter().chain(&test.labels).find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {class_count} classes")));
        }
        let n = pool.len();
        let n_val = ((n as f64) * VALIDATION_FRACTION).round() as usize;
        let n_val = n_val.min(n.saturating_sub(1));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        let mut val_idx = order[..n_val].to_vec();
        let mut train_idx = order[n_val..].to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        Ok(Self {
            train: pool.subset(&train_idx),
            validation: pool.subset(&val_idx),
            test,
            class_count,
            provenance: Provenance {
                source: source.into(),
                normalization: normalization.into(),
                split_seed,
            },
            validation_indices: val_idx,
        })
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.train.sample_shape
    }
}
