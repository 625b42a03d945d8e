//! Filter-count shrinkage with an epsilon floor, and survivor selection.

use serde::{Deserialize, Serialize};

use crate::compress::calibrate::ChannelFlow;
use crate::compress::profile::SparsityProfile;
use crate::error::{Error, Result};
use crate::nn::{ArchitectureDescriptor, LayerSpec, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitMode {
    /// Each layer's width follows the sparsity of the next prunable layer.
    PerLayer,
    /// Residual blocks are profiled as one unit and only their inner
    /// widths shrink, so the skip-add stays valid.
    PerResidualBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Lower bound on the kept fraction of filters, in `(0, 1]`.
    pub epsilon: f64,
    pub unit_mode: UnitMode,
    pub shrink_linear_layers: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            unit_mode: UnitMode::PerLayer,
            shrink_linear_layers: true,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Old and new width of one prunable layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShrink {
    pub layer: usize,
    pub old: usize,
    pub new: usize,
    /// Kept filter indices, ascending; empty until survivors are selected.
    pub survivors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkPlan {
    pub epsilon: f64,
    /// One entry per prunable layer, in forward order.
    pub layers: Vec<LayerShrink>,
    /// Layers whose outputs are tied by skip connections; they share one
    /// survivor set.
    pub groups: Vec<Vec<usize>>,
}

/// Smallest integer not below `x`, treating values within 1e-9 of an
/// integer as that integer so `512 * (1 - 0.9)` stays 52 rather than 53.
pub fn snapped_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// `ceil(k * max(1 - s, epsilon))`, kept within `[ceil(epsilon * k), k]`.
pub fn shrunk_width(k: usize, s: f64, epsilon: f64) -> usize {
    let floor = snapped_ceil(epsilon * k as f64).max(1);
    snapped_ceil(k as f64 * (1.0 - s).max(epsilon)).clamp(floor, k)
}

impl ShrinkPlan {
    pub fn entry(&self, layer: usize) -> Option<&LayerShrink> {
        self.layers.iter().find(|e| e.layer == layer)
    }

    /// Checks the floor/monotonicity bounds and survivor lists.
    pub fn check(&self) -> Result<()> {
        for e in &self.layers {
            let floor = snapped_ceil(self.epsilon * e.old as f64).max(1);
            if e.new < floor || e.new > e.old {
                return Err(Error::InvalidArgument(format!(
                    "layer {}: new width {} outside [{floor}, {}]",
                    e.layer, e.new, e.old
                )));
            }
            if !e.survivors.is_empty() {
                let ok = e.survivors.len() == e.new
                    && e.survivors.windows(2).all(|w| w[0] < w[1])
                    && e.survivors.last().is_some_and(|&s| s < e.old);
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "layer {}: survivor list {:?} does not pick {} of {} filters",
                        e.layer, e.survivors, e.new, e.old
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn shrinks_anything(&self) -> bool {
        self.layers.iter().any(|e| e.new < e.old)
    }
}

/// Backward pass over the prunable layers computing new widths.
///
/// The last prunable layer (the classifier) keeps its width; every other
/// layer shrinks according to the sparsity of the unit that consumes it.
pub fn shrink_plan(
    arch: &ArchitectureDescriptor,
    profile: &SparsityProfile,
    config: &CompressionConfig,
) -> Result<ShrinkPlan> {
    config.validate()?;
    arch.validate()?;
    profile.check_bound(arch)?;
    let flow = ChannelFlow::of(arch);
    let prunable = arch.prunable_layers();
    let mut entries = Vec::with_capacity(prunable.len());
    for j in (0..prunable.len()).rev() {
        let i = prunable[j];
        let layer = arch.layers[i];
        let k = layer.width().expect("prunable");
        let frozen = j + 1 == prunable.len()
            || flow.pinned.contains(&i)
            || (!config.shrink_linear_layers && matches!(layer, LayerSpec::Linear { .. }));
        let downstream = if frozen {
            None
        } else {
            let next = prunable[j + 1];
            match config.unit_mode {
                UnitMode::PerLayer => profile.layers[next],
                UnitMode::PerResidualBlock => {
                    let b = arch.block_of(i).expect("validated");
                    let block = &arch.blocks[b];
                    if block.is_residual() {
                        let tail = block.layers.iter().rev().find(|&&m| arch.layers[m].is_parameterized());
                        // the branch output must keep matching the skip path
                        (tail != Some(&i)).then_some(profile.blocks[b])
                    } else {
                        Some(profile.blocks[arch.block_of(next).expect("validated")])
                    }
                }
            }
        };
        let new = downstream.map_or(k, |s| shrunk_width(k, s, config.epsilon));
        entries.push(LayerShrink {
            layer: i,
            old: k,
            new,
            survivors: Vec::new(),
        });
    }
    entries.reverse();
    let plan = ShrinkPlan {
        epsilon: config.epsilon,
        layers: entries,
        groups: flow.groups,
    };
    plan.check()?;
    Ok(plan)
}

/// Row-wise L1 norms of a layer's weight matrix (one per filter/neuron).
pub fn filter_norms(params: &ParameterSet, layer: usize) -> Result<Vec<f64>> {
    let w = params.weight(layer)?;
    let rows = w.shape()[0];
    let per = w.len() / rows;
    Ok(w.data()
        .chunks_exact(per)
        .map(|row| row.iter().map(|&v| (v as f64).abs()).sum())
        .collect())
}

/// Indices of the `k` largest norms, lower index first among equals,
/// returned in ascending order.
pub fn top_k_by_norm(norms: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut keep = order[..k.min(norms.len())].to_vec();
    keep.sort_unstable();
    keep
}

/// Fills the survivor lists: the filters with the largest row L1 norm.
/// Layers tied by a skip connection rank filters by their summed norms and
/// share one survivor set.
pub fn select_survivors(params: &ParameterSet, plan: &ShrinkPlan) -> Result<ShrinkPlan> {
    let mut out = plan.clone();
    for e in out.layers.iter_mut() {
        let group: Vec<usize> = plan
            .groups
            .iter()
            .find(|g| g.contains(&e.layer))
            .cloned()
            .unwrap_or_else(|| vec![e.layer]);
        let mut norms = vec![0.0; e.old];
        for &m in &group {
            let member = plan
                .entry(m)
                .ok_or_else(|| Error::InvalidArgument(format!("tied layer {m} missing from the plan")))?;
            if member.old != e.old || member.new != e.new {
                return Err(Error::InvalidArgument(format!(
                    "tied layers {} and {m} disagree on widths",
                    e.layer
                )));
            }
            let row = filter_norms(params, m)?;
            if row.len() != e.old {
                return Err(Error::Shape(format!(
                    "layer {m} has {} filters, the plan expects {}",
                    row.len(),
                    e.old
                )));
            }
            for (acc, v) in norms.iter_mut().zip(row) {
                *acc += v;
            }
        }
        e.survivors = top_k_by_norm(&norms, e.new);
    }
    out.check()?;
    Ok(out)
}
