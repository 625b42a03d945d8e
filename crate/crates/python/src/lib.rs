//! Python bindings: architectures, parameters, datasets, training,
//! compression and checkpoints. Long-running calls release the GIL.
//!
//! Tensors cross the boundary as flat `list[float]` plus a shape; the
//! layouts are the same row-major NCHW ones used on the Rust side.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use rsp_core::compress::{self as comp, count_flops, count_params, CompressionConfig, UnitMode};
use rsp_core::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use rsp_core::data::{cifar, idx, synth, DatasetHandle, Split};
use rsp_core::driver::{self, ConvergenceConfig, RSPConfig};
use rsp_core::nn::{model_forward, ArchitectureDescriptor, ParameterSet, Preset};
use rsp_core::optim::{self, split_accuracy, split_loss, SwitchSchedule, TrainConfig};
use rsp_core::{Error, Tensor};

create_exception!(rsp, RspError, PyException, "Any failure reported by the core library.");
create_exception!(rsp, NumericError, RspError, "Divergence, overflow or a non-finite value.");

fn py_err(e: Error) -> PyErr {
    if e.is_numeric() {
        NumericError::new_err(e.to_string())
    } else {
        RspError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for rsp_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A validated network description.
#[pyclass(name = "Architecture", module = "rsp", skip_from_py_object)]
#[derive(Clone)]
pub struct PyArchitecture {
    inner: ArchitectureDescriptor,
}

#[pymethods]
impl PyArchitecture {
    /// Builds `lenet-small`, `vgg-tiny` or `resnet-tiny` for the given
    /// `(channels, height, width)` input and class count.
    #[staticmethod]
    fn preset(name: &str, input_shape: [usize; 3], classes: usize) -> PyResult<Self> {
        let p: Preset = name.parse().map_err(|e: Error| py_err(e))?;
        Ok(Self {
            inner: p.build(input_shape, classes).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ArchitectureDescriptor::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn input_shape(&self) -> [usize; 3] {
        self.inner.input_shape
    }

    /// Output width of every parameterized layer.
    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths()
    }

    #[getter]
    fn class_count(&self) -> PyResult<usize> {
        self.inner.class_count().py()
    }

    fn prunable_layers(&self) -> Vec<usize> {
        self.inner.prunable_layers()
    }

    fn flops(&self) -> PyResult<u64> {
        count_flops(&self.inner).py()
    }

    fn params(&self) -> PyResult<u64> {
        count_params(&self.inner).py()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Architecture({})", self.inner.widths_string())
    }
}

/// Weights and biases keyed by layer.
#[pyclass(name = "Parameters", module = "rsp", skip_from_py_object)]
#[derive(Clone)]
pub struct PyParameters {
    inner: ParameterSet,
}

#[pymethods]
impl PyParameters {
    /// He-initialized parameters, deterministic in `seed`.
    #[staticmethod]
    fn init(arch: &PyArchitecture, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: ParameterSet::init(&arch.inner, seed).py()?,
        })
    }

    fn keys(&self) -> Vec<String> {
        self.inner.keys().cloned().collect()
    }

    /// `(shape, values)` of one tensor.
    fn get(&self, key: &str) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let t = self
            .inner
            .get(key)
            .ok_or_else(|| RspError::new_err(format!("no parameter named {key:?}")))?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    /// Replaces one tensor; the shape must stay the same.
    fn set(&mut self, key: &str, values: Vec<f32>) -> PyResult<()> {
        let t = self
            .inner
            .get_mut(key)
            .ok_or_else(|| RspError::new_err(format!("no parameter named {key:?}")))?;
        let replacement = Tensor::new(t.shape().to_vec(), values).py()?;
        *t = replacement;
        Ok(())
    }

    /// Fraction of exactly-zero weights (biases excluded).
    fn sparsity(&self) -> f64 {
        self.inner.overall_sparsity()
    }

    fn weight_l1(&self) -> f64 {
        self.inner.weight_l1()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner.bit_eq(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Train, validation and test splits.
#[pyclass(name = "Dataset", module = "rsp")]
pub struct PyDataset {
    inner: DatasetHandle,
}

impl PyDataset {
    fn split(&self, name: &str) -> PyResult<&Split> {
        match name {
            "train" => Ok(&self.inner.train),
            "validation" => Ok(&self.inner.validation),
            "test" => Ok(&self.inner.test),
            other => Err(RspError::new_err(format!("unknown split {other:?}"))),
        }
    }
}

#[pymethods]
impl PyDataset {
    /// The synthetic redundant-channel dataset.
    #[staticmethod]
    #[pyo3(signature = (seed, samples=2000, informative_channels=2, noise_channels=2, classes=10))]
    fn synth(seed: u64, samples: usize, informative_channels: usize, noise_channels: usize, classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: synth::synth_redundant(seed, samples, informative_channels, noise_channels, classes).py()?,
        })
    }

    /// MNIST from a directory of IDX files.
    #[staticmethod]
    #[pyo3(signature = (path, split_seed=0))]
    fn mnist(path: PathBuf, split_seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: idx::load_mnist_dir(path, split_seed).py()?,
        })
    }

    /// CIFAR-10 from a directory of binary batches.
    #[staticmethod]
    #[pyo3(signature = (path, split_seed=0))]
    fn cifar10(path: PathBuf, split_seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: cifar::load_cifar10_dir(path, split_seed).py()?,
        })
    }

    #[getter]
    fn sample_shape(&self) -> [usize; 3] {
        self.inner.sample_shape()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.provenance.source.clone()
    }

    /// Number of samples in `train`, `validation` or `test`.
    fn len(&self, split: &str) -> PyResult<usize> {
        Ok(self.split(split)?.len())
    }

    /// `(image, label)` of one sample.
    fn sample(&self, split: &str, index: usize) -> PyResult<(Vec<f32>, usize)> {
        let s = self.split(split)?;
        if index >= s.len() {
            return Err(RspError::new_err(format!("index {index} out of range for {} samples", s.len())));
        }
        Ok((s.sample(index).to_vec(), s.labels[index]))
    }
}

/// Outcome of a compression run.
#[pyclass(name = "RunResult", module = "rsp", get_all)]
pub struct PyRunResult {
    arch: PyArchitecture,
    params: PyParameters,
    /// Why the round loop ended, e.g. `"MaxRounds"`.
    stop_reason: Option<String>,
    compression_ratio: f64,
    flops_speedup: f64,
    history_json: String,
}

fn train_config(batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig::new(batch_size, learning_rate, seed)
}

/// Runs the network on `n` samples laid out back to back; returns the
/// logits, `n * classes` values.
#[pyfunction]
fn forward(arch: &PyArchitecture, params: &PyParameters, images: Vec<f32>, n: usize) -> PyResult<Vec<f32>> {
    let [c, h, w] = arch.inner.input_shape;
    let batch = Tensor::new(vec![n, c, h, w], images).py()?;
    Ok(model_forward(&arch.inner, &params.inner, &batch).py()?.into_data())
}

#[pyfunction]
#[pyo3(signature = (arch, params, dataset, split="test"))]
fn accuracy(arch: &PyArchitecture, params: &PyParameters, dataset: &PyDataset, split: &str) -> PyResult<f64> {
    split_accuracy(&arch.inner, &params.inner, dataset.split(split)?).py()
}

/// Mean cross-entropy on one split.
#[pyfunction]
#[pyo3(signature = (arch, params, dataset, split="train"))]
fn loss(arch: &PyArchitecture, params: &PyParameters, dataset: &PyDataset, split: &str) -> PyResult<f64> {
    split_loss(&arch.inner, &params.inner, dataset.split(split)?).py()
}

#[pyfunction]
fn soft_threshold(z: f64, t: f64) -> PyResult<f64> {
    optim::soft_threshold(z, t).py()
}

/// Dense training from a fresh initialization.
#[pyfunction]
#[pyo3(signature = (arch, dataset, epochs, init_seed=0, batch_size=64, learning_rate=0.05, seed=0))]
fn train_baseline(
    py: Python<'_>,
    arch: &PyArchitecture,
    dataset: &PyDataset,
    epochs: usize,
    init_seed: u64,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyParameters> {
    let config = train_config(batch_size, learning_rate, seed);
    let out = py
        .detach(|| driver::train_baseline(&arch.inner, &dataset.inner, init_seed, epochs, &config))
        .py()?;
    Ok(PyParameters { inner: out.params })
}

/// L1-regularized training: proximal steps for the first half of the
/// epochs, orthant steps for the rest.
#[pyfunction]
#[pyo3(signature = (arch, params, dataset, lam, epochs, batch_size=64, learning_rate=0.05, seed=0, prox_only=false))]
fn train_sparse(
    py: Python<'_>,
    arch: &PyArchitecture,
    params: &PyParameters,
    dataset: &PyDataset,
    lam: f64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    prox_only: bool,
) -> PyResult<PyParameters> {
    let config = train_config(batch_size, learning_rate, seed);
    let switch = if prox_only {
        SwitchSchedule::prox_only(epochs)
    } else {
        SwitchSchedule::halves(epochs)
    };
    let init = params.inner.clone();
    let out = py
        .detach(|| optim::sparse_train(&arch.inner, init, &dataset.inner, lam, switch, &config))
        .py()?;
    Ok(PyParameters { inner: out.params })
}

fn compression_config(epsilon: f64, unit_mode: &str, shrink_linear_layers: bool) -> PyResult<CompressionConfig> {
    let unit_mode = match unit_mode {
        "per-layer" => UnitMode::PerLayer,
        "per-residual-block" => UnitMode::PerResidualBlock,
        other => return Err(RspError::new_err(format!("unknown unit mode {other:?}"))),
    };
    Ok(CompressionConfig {
        epsilon,
        unit_mode,
        shrink_linear_layers,
    })
}

/// Shrinks every prunable layer according to the measured sparsity and
/// keeps the heaviest filters.
#[pyfunction]
#[pyo3(signature = (arch, params, epsilon=0.1, unit_mode="per-layer", shrink_linear_layers=true))]
fn compress(
    arch: &PyArchitecture,
    params: &PyParameters,
    epsilon: f64,
    unit_mode: &str,
    shrink_linear_layers: bool,
) -> PyResult<(PyArchitecture, PyParameters)> {
    let config = compression_config(epsilon, unit_mode, shrink_linear_layers)?;
    let c = comp::compress(&arch.inner, &params.inner, &config).py()?;
    Ok((PyArchitecture { inner: c.arch }, PyParameters { inner: c.params }))
}

/// Rounds of exploration and compression from a trained baseline, then
/// fine-tuning of the selected model.
#[pyfunction]
#[pyo3(signature = (
    arch, params, dataset, lambda0, rounds=1, explore_epochs=4, finetune_epochs=3,
    epsilon=0.1, unit_mode="per-layer", batch_size=64, learning_rate=0.05, seed=0
))]
fn rsp_run(
    py: Python<'_>,
    arch: &PyArchitecture,
    params: &PyParameters,
    dataset: &PyDataset,
    lambda0: f64,
    rounds: usize,
    explore_epochs: usize,
    finetune_epochs: usize,
    epsilon: f64,
    unit_mode: &str,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyRunResult> {
    let train = train_config(batch_size, learning_rate, seed);
    let config = RSPConfig {
        lambda0,
        max_rounds: rounds,
        switch: SwitchSchedule::halves(explore_epochs),
        explore: train.clone(),
        finetune_epochs,
        finetune: train,
        convergence: ConvergenceConfig::default(),
        compression: compression_config(epsilon, unit_mode, true)?,
        retrain_from_scratch: false,
        init_seed: seed,
    };
    let out = py
        .detach(|| driver::rsp_run(&config, &arch.inner, &params.inner, &dataset.inner))
        .py()?;
    let history_json = serde_json::to_string(&out.history).map_err(|e| py_err(e.into()))?;
    Ok(PyRunResult {
        compression_ratio: comp::compression_ratio(&arch.inner, &out.arch).py()?,
        flops_speedup: comp::flops_speedup(&arch.inner, &out.arch).py()?,
        stop_reason: out.stop.map(|s| format!("{s:?}")),
        arch: PyArchitecture { inner: out.arch },
        params: PyParameters { inner: out.params },
        history_json,
    })
}

#[pyfunction]
#[pyo3(signature = (path, arch, params, seed=0, lam=0.0, accuracy=None))]
fn save(path: PathBuf, arch: &PyArchitecture, params: &PyParameters, seed: u64, lam: f64, accuracy: Option<f64>) -> PyResult<()> {
    let meta = CheckpointMeta {
        seed,
        lambda: lam,
        accuracy,
        accuracy_split: accuracy.map(|_| "test".to_string()),
        ..CheckpointMeta::default()
    };
    let ckpt = Checkpoint::new(arch.inner.clone(), params.inner.clone(), meta).py()?;
    save_checkpoint(path, &ckpt).py()
}

/// Reads a checkpoint; returns `(arch, params, accuracy)`.
#[pyfunction]
fn load(path: PathBuf) -> PyResult<(PyArchitecture, PyParameters, Option<f64>)> {
    let c = load_checkpoint(path).py()?;
    Ok((PyArchitecture { inner: c.arch }, PyParameters { inner: c.params }, c.meta.accuracy))
}

#[pymodule]
fn rsp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RspError", m.py().get_type::<RspError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PyParameters>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(train_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(train_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(rsp_run, m)?)?;
    m.add_function(wrap_pyfunction!(save, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    Ok(())
}
