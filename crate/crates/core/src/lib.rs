//! Recursive sparse pruning for small convolutional networks.
//!
//! The crate trains a network under an L1 penalty with a proximal /
//! orthant-face stochastic optimizer, reads per-layer sparsity off the
//! result, and shrinks filter counts accordingly. Repeating that loop and
//! fine-tuning the survivor weights yields a smaller network with
//! comparable accuracy.
//!
//! Modules, bottom-up:
//! - [`nn`]: tensors, layers, forward/backward.
//! - [`optim`]: soft thresholding, prox-SGD and orthant steps, sparse training.
//! - [`compress`]: sparsity profiles, shrink plans, calibration, FLOPs accounting.
//! - [`driver`]: the alternating explore/compress/rescale loop and fine-tuning.
//! - [`data`]: MNIST/CIFAR-10 loaders, synthetic data, checkpoints.
//! - [`report`]: run reports and table/CSV rendering.

pub mod compress;
pub mod data;
pub mod driver;
pub mod error;
pub mod nn;
pub mod optim;
pub mod report;
pub mod tensor;
pub mod util;

pub use error::{CheckpointError, DataError, Error, Result};
pub use tensor::Tensor;
