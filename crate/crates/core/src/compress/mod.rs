//! Turning weight sparsity into a smaller architecture.
//!
//! The pipeline is: measure a [`SparsityProfile`], derive a [`ShrinkPlan`]
//! (backward over the prunable layers), apply the new widths, [`calibrate`]
//! channel counts, then copy the surviving filters' weights across.

pub mod accounting;
pub mod calibrate;
pub mod plan;
pub mod profile;

use crate::error::{Error, Result};
use crate::nn::{bias_key, weight_key, ArchitectureDescriptor, FeatureShape, LayerSpec, ParameterSet};
use crate::tensor::Tensor;

pub use accounting::{compression_ratio, count_flops, count_params, flops_speedup};
pub use calibrate::{calibrate, ChannelFlow};
pub use plan::{
    filter_norms, select_survivors, shrink_plan, shrunk_width, top_k_by_norm, CompressionConfig, LayerShrink, ShrinkPlan,
    UnitMode,
};
pub use profile::{block_sparsity, layer_sparsity, SparsityProfile};

/// Writes the plan's new widths into a copy of the architecture. Channel
/// counts downstream are left stale for [`calibrate`] to repair.
pub fn apply_plan(arch: &ArchitectureDescriptor, plan: &ShrinkPlan) -> ArchitectureDescriptor {
    let mut out = arch.clone();
    for e in &plan.layers {
        calibrate::set_width(&mut out.layers[e.layer], e.new);
    }
    out
}

/// Result of one compression step.
#[derive(Clone, Debug)]
pub struct Compressed {
    pub profile: SparsityProfile,
    /// Widths after calibration, with survivors filled in.
    pub plan: ShrinkPlan,
    pub arch: ArchitectureDescriptor,
    pub params: ParameterSet,
}

/// Profile, plan, calibrate and slice in one go.
pub fn compress(arch: &ArchitectureDescriptor, params: &ParameterSet, config: &CompressionConfig) -> Result<Compressed> {
    let profile = SparsityProfile::measure(arch, params)?;
    let mut plan = shrink_plan(arch, &profile, config)?;
    let pruned = calibrate(&apply_plan(arch, &plan))?;
    for e in plan.layers.iter_mut() {
        e.new = pruned.layers[e.layer].width().expect("prunable");
    }
    let plan = select_survivors(params, &plan)?;
    let params = extract_survivors(arch, params, &pruned, &plan)?;
    Ok(Compressed {
        profile,
        plan,
        arch: pruned,
        params,
    })
}

/// Copies the surviving filters (rows) and surviving input channels
/// (columns) of every layer into a parameter set shaped for `pruned`.
pub fn extract_survivors(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    pruned: &ArchitectureDescriptor,
    plan: &ShrinkPlan,
) -> Result<ParameterSet> {
    params.check_against(arch)?;
    let shapes = arch.validate()?;
    let flow = ChannelFlow::of(arch);
    let keep = |layer: usize| -> Result<Vec<usize>> {
        let e = plan
            .entry(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} missing from the plan")))?;
        if e.survivors.len() != e.new {
            return Err(Error::InvalidArgument(format!("layer {layer} has no survivor list")));
        }
        Ok(e.survivors.clone())
    };

    let mut out = ParameterSet::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        if !layer.is_parameterized() {
            continue;
        }
        let rows = keep(i)?;
        let (in_channels, source_channels) = match flow.source[i] {
            Some(p) => (keep(p)?, arch.layers[p].width().expect("prunable")),
            None => ((0..arch.input_shape[0]).collect(), arch.input_shape[0]),
        };
        let w = params.weight(i)?;
        let b = params.bias(i)?;
        let row_len = w.len() / w.shape()[0];
        // columns of one input channel inside a row
        let per_channel = match (*layer, shapes[i]) {
            (LayerSpec::Conv2d { kernel_h, kernel_w, .. }, _) => kernel_h * kernel_w,
            (LayerSpec::Linear { .. }, FeatureShape::Vector(n)) => n / source_channels,
            _ => unreachable!("validated architecture"),
        };
        let mut data = Vec::with_capacity(rows.len() * in_channels.len() * per_channel);
        for &r in &rows {
            let row = &w.data()[r * row_len..(r + 1) * row_len];
            for &c in &in_channels {
                data.extend_from_slice(&row[c * per_channel..(c + 1) * per_channel]);
            }
        }
        let shape = pruned.layers[i]
            .weight_shape()
            .ok_or_else(|| Error::Shape(format!("layer {i} lost its weights in the pruned architecture")))?;
        out.insert(weight_key(i), Tensor::new(shape, data)?);
        out.insert(bias_key(i), Tensor::vector(rows.iter().map(|&r| b.data()[r]).collect())?);
    }
    out.check_against(pruned)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::model_forward;

    #[test]
    fn epsilon_one_changes_nothing() {
        let arch = ArchitectureDescriptor::sequential(
            [1, 6, 6],
            vec![
                LayerSpec::conv(1, 4, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::linear(64, 3),
            ],
        )
        .unwrap();
        let mut params = ParameterSet::init(&arch, 3).unwrap();
        params.get_mut(&weight_key(3)).unwrap().data_mut()[..100].fill(0.0);
        let cfg = CompressionConfig {
            epsilon: 1.0,
            ..Default::default()
        };
        let c = compress(&arch, &params, &cfg).unwrap();
        assert_eq!(c.arch, arch);
        assert!(c.params.bit_eq(&params));
    }

    #[test]
    fn dropping_dead_filters_preserves_function() {
        // filters 0 and 2 of the conv are zero, so removing them (and their
        // linear columns) must leave the logits untouched
        let arch = ArchitectureDescriptor::sequential(
            [2, 5, 5],
            vec![
                LayerSpec::conv(2, 4, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::max_pool(2, 1),
                LayerSpec::Flatten,
                LayerSpec::linear(16, 3),
            ],
        )
        .unwrap();
        let mut params = ParameterSet::init(&arch, 9).unwrap();
        {
            let w = params.get_mut(&weight_key(0)).unwrap().data_mut();
            w[..18].fill(0.0);
            w[36..54].fill(0.0);
        }
        params.get_mut(&bias_key(0)).unwrap().data_mut().fill(0.0);
        let prof = SparsityProfile::from_layer_ratios(&arch, &[0.0, 0.5]).unwrap();
        let mut plan = shrink_plan(&arch, &prof, &CompressionConfig::default()).unwrap();
        let pruned = calibrate(&apply_plan(&arch, &plan)).unwrap();
        assert_eq!(pruned.widths(), vec![2, 3]);
        plan.layers[0].new = 2;
        let plan = select_survivors(&params, &plan).unwrap();
        assert_eq!(plan.layers[0].survivors, vec![1, 3]);
        let small = extract_survivors(&arch, &params, &pruned, &plan).unwrap();

        let x = Tensor::from_fn(&[2, 2, 5, 5], |i| ((i * 37) % 11) as f32 / 11.0 - 0.3).unwrap();
        let a = model_forward(&arch, &params, &x).unwrap();
        let b = model_forward(&pruned, &small, &x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
    }
}
