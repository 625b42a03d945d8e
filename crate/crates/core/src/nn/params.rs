//! Named weight tensors bound to an architecture.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::arch::ArchitectureDescriptor;
use crate::tensor::Tensor;

pub fn weight_key(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_key(layer: usize) -> String {
    format!("layer{layer}.bias")
}

/// Layer index encoded in a parameter name, if any.
pub fn layer_of_key(key: &str) -> Option<usize> {
    key.strip_prefix("layer")?.split('.').next()?.parse().ok()
}

pub fn is_weight_key(key: &str) -> bool {
    key.ends_with(".weight")
}

/// Map from parameter name to tensor. Every conv/linear layer `i` owns
/// `layer{i}.weight` and `layer{i}.bias`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fan-in scaled uniform initialization: weights drawn from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero.
    pub fn init(arch: &ArchitectureDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::new();
        for (i, layer) in arch.layers.iter().enumerate() {
            let Some(shape) = layer.weight_shape() else {
                continue;
            };
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let w = Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))?;
            params.insert(weight_key(i), w);
            params.insert(bias_key(i), Tensor::zeros(&layer.bias_shape().expect("parameterized"))?);
        }
        Ok(params)
    }

    /// All-zero parameters shaped for `arch`.
    pub fn zeros(arch: &ArchitectureDescriptor) -> Result<Self> {
        let mut params = Self::new();
        for (i, layer) in arch.layers.iter().enumerate() {
            if let (Some(ws), Some(bs)) = (layer.weight_shape(), layer.bias_shape()) {
                params.insert(weight_key(i), Tensor::zeros(&ws)?);
                params.insert(bias_key(i), Tensor::zeros(&bs)?);
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), t.map(|_| 0.0)))
                .collect(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(key.into(), tensor)
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(key)
    }

    pub fn weight(&self, layer: usize) -> Result<&Tensor> {
        self.get(&weight_key(layer))
            .ok_or_else(|| Error::Shape(format!("missing parameter {}", weight_key(layer))))
    }

    pub fn bias(&self, layer: usize) -> Result<&Tensor> {
        self.get(&bias_key(layer))
            .ok_or_else(|| Error::Shape(format!("missing parameter {}", bias_key(layer))))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Weight tensors only (the entries that participate in L1 and sparsity).
    pub fn weights(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter().filter(|(k, _)| is_weight_key(k))
    }

    /// Checks that the entries are exactly those `arch` requires, with matching shapes.
    pub fn check_against(&self, arch: &ArchitectureDescriptor) -> Result<()> {
        let mut expected = 0;
        for (i, layer) in arch.layers.iter().enumerate() {
            let (Some(ws), Some(bs)) = (layer.weight_shape(), layer.bias_shape()) else {
                continue;
            };
            for (key, shape) in [(weight_key(i), ws), (bias_key(i), bs)] {
                expected += 1;
                match self.get(&key) {
                    None => return Err(Error::Shape(format!("missing parameter {key} for layer {i} ({layer})"))),
                    Some(t) if t.shape() != shape.as_slice() => {
                        return Err(Error::Shape(format!(
                            "parameter {key} has shape {:?}, layer {i} ({layer}) requires {shape:?}",
                            t.shape()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        if self.len() != expected {
            let extra: Vec<_> = self
                .keys()
                .filter(|k| layer_of_key(k).is_none_or(|i| !arch.layers.get(i).is_some_and(|l| l.is_parameterized())))
                .cloned()
                .collect();
            return Err(Error::Shape(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }

    /// Sum of absolute weight values (biases excluded).
    pub fn weight_l1(&self) -> f64 {
        self.weights().map(|(_, t)| t.l1_norm()).sum()
    }

    /// `(exact zeros, total)` over weight tensors.
    pub fn weight_zero_count(&self) -> (usize, usize) {
        self.weights()
            .fold((0, 0), |(z, n), (_, t)| (z + t.count_zeros(), n + t.len()))
    }

    /// Fraction of exactly-zero weights across all layers.
    pub fn overall_sparsity(&self) -> f64 {
        let (z, n) = self.weight_zero_count();
        if n == 0 {
            0.0
        } else {
            z as f64 / n as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// True when both sets hold the same keys with bit-identical values.
    pub fn bit_eq(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|((ka, ta), (kb, tb))| {
                ka == kb
                    && ta.shape() == tb.shape()
                    && ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }
}
