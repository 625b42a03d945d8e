//! Exact-zero sparsity ratios per layer and per building block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{weight_key, ArchitectureDescriptor, ParameterSet};

/// Fraction of exactly-zero entries in a layer's kernel weights.
pub fn layer_sparsity(params: &ParameterSet, layer: usize) -> Result<f64> {
    let w = params
        .get(&weight_key(layer))
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} has no weights")))?;
    Ok(w.count_zeros() as f64 / w.len() as f64)
}

/// Zeros over elements, pooled across every kernel of a block.
pub fn block_sparsity(arch: &ArchitectureDescriptor, params: &ParameterSet, block: usize) -> Result<f64> {
    let members = arch
        .blocks
        .get(block)
        .ok_or_else(|| Error::InvalidArgument(format!("block {block} does not exist")))?;
    let (mut zeros, mut total) = (0usize, 0usize);
    for &i in &members.layers {
        if arch.layers[i].is_parameterized() {
            let w = params.weight(i)?;
            zeros += w.count_zeros();
            total += w.len();
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument(format!("block {block} holds no kernel weights")));
    }
    Ok(zeros as f64 / total as f64)
}

/// Per-block sparsity ratios, plus the per-layer ratios they pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    /// One ratio per building block; blocks without kernels read 0.
    pub blocks: Vec<f64>,
    /// One entry per layer; `None` for parameter-free layers.
    pub layers: Vec<Option<f64>>,
}

impl SparsityProfile {
    /// Measures the profile of a parameter set.
    pub fn measure(arch: &ArchitectureDescriptor, params: &ParameterSet) -> Result<Self> {
        params.check_against(arch)?;
        let layers = arch
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.is_parameterized().then(|| layer_sparsity(params, i)).transpose())
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..arch.blocks.len())
            .map(|b| block_sparsity(arch, params, b).unwrap_or(0.0))
            .collect();
        Ok(Self { blocks, layers })
    }

    /// Builds a profile from one ratio per prunable layer, pooling block
    /// ratios by element count.
    pub fn from_layer_ratios(arch: &ArchitectureDescriptor, ratios: &[f64]) -> Result<Self> {
        let prunable = arch.prunable_layers();
        if ratios.len() != prunable.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ratios for {} prunable layers",
                ratios.len(),
                prunable.len()
            )));
        }
        if let Some(bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!("sparsity ratio {bad} outside [0, 1]")));
        }
        let mut layers = vec![None; arch.layers.len()];
        for (&i, &r) in prunable.iter().zip(ratios) {
            layers[i] = Some(r);
        }
        let numel = |i: usize| arch.layers[i].weight_shape().map_or(0, |s| s.iter().product::<usize>()) as f64;
        let blocks = arch
            .blocks
            .iter()
            .map(|b| {
                let (z, t) = b.layers.iter().fold((0.0, 0.0), |(z, t), &i| match layers[i] {
                    Some(r) => (z + r * numel(i), t + numel(i)),
                    None => (z, t),
                });
                if t > 0.0 {
                    z / t
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self { blocks, layers })
    }

    pub(crate) fn check_bound(&self, arch: &ArchitectureDescriptor) -> Result<()> {
        if self.blocks.len() != arch.blocks.len() || self.layers.len() != arch.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "profile covers {} blocks / {} layers, architecture has {} / {}",
                self.blocks.len(),
                self.layers.len(),
                arch.blocks.len(),
                arch.layers.len()
            )));
        }
        for (i, layer) in arch.layers.iter().enumerate() {
            if layer.is_parameterized() != self.layers[i].is_some() {
                return Err(Error::InvalidArgument(format!("profile entry for layer {i} does not match its kind")));
            }
        }
        if let Some(bad) = self
            .blocks
            .iter()
            .chain(self.layers.iter().flatten())
            .find(|r| !(0.0..=1.0).contains(*r))
        {
            return Err(Error::InvalidArgument(format!("sparsity ratio {bad} outside [0, 1]")));
        }
        Ok(())
    }
}
