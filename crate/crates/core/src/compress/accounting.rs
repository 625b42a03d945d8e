//! FLOPs and parameter counts.

use crate::error::Result;
use crate::nn::{ArchitectureDescriptor, FeatureShape, LayerSpec};

/// Multiply-add operations of one forward pass on one sample, counted as
/// two FLOPs each. Conv: `2 * C_in * H_K * W_K * H_O * W_O * C_out`;
/// linear: `2 * in * out`; pooling and activations count as zero.
pub fn count_flops(arch: &ArchitectureDescriptor) -> Result<u64> {
    let shapes = arch.validate()?;
    let mut total = 0u64;
    for (i, layer) in arch.layers.iter().enumerate() {
        total += match (*layer, shapes[i + 1]) {
            (
                LayerSpec::Conv2d {
                    out_channels,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    ..
                },
                FeatureShape::Image { h, w, .. },
            ) => 2 * (in_channels * kernel_h * kernel_w * h * w * out_channels) as u64,
            (
                LayerSpec::Linear {
                    in_features,
                    out_features,
                },
                _,
            ) => 2 * (in_features * out_features) as u64,
            _ => 0,
        };
    }
    Ok(total)
}

/// Weights plus biases of every conv and linear layer.
pub fn count_params(arch: &ArchitectureDescriptor) -> Result<u64> {
    arch.validate()?;
    Ok(arch
        .layers
        .iter()
        .map(|l| {
            let w: usize = l.weight_shape().map_or(0, |s| s.iter().product());
            let b: usize = l.bias_shape().map_or(0, |s| s.iter().product());
            (w + b) as u64
        })
        .sum())
}

/// `params(base) / params(pruned)`.
pub fn compression_ratio(base: &ArchitectureDescriptor, pruned: &ArchitectureDescriptor) -> Result<f64> {
    Ok(count_params(base)? as f64 / count_params(pruned)? as f64)
}

/// `flops(base) / flops(pruned)`.
pub fn flops_speedup(base: &ArchitectureDescriptor, pruned: &ArchitectureDescriptor) -> Result<f64> {
    Ok(count_flops(base)? as f64 / count_flops(pruned)? as f64)
}
