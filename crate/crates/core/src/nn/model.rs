//! Whole-network forward and backward passes.

use crate::error::{Error, Result};
use crate::nn::arch::{ArchitectureDescriptor, FeatureShape, LayerSpec};
use crate::nn::ops::{self, ConvGeom};
use crate::nn::params::{bias_key, weight_key, ParameterSet};
use crate::tensor::Tensor;

/// Activations recorded during a forward pass.
struct Trace {
    n: usize,
    shapes: Vec<FeatureShape>,
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Vec<f32>>,
    pool_args: Vec<Option<Vec<usize>>>,
}

fn batch_extent(arch: &ArchitectureDescriptor, batch: &Tensor) -> Result<usize> {
    let [c, h, w] = arch.input_shape;
    match *batch.shape() {
        [n, bc, bh, bw] if [bc, bh, bw] == [c, h, w] => Ok(n),
        ref other => Err(Error::Shape(format!(
            "batch shape {other:?} does not match (n, {c}, {h}, {w})"
        ))),
    }
}

fn layer_name(i: usize, layer: &LayerSpec) -> String {
    format!("layer {i} ({layer})")
}

fn forward_trace(arch: &ArchitectureDescriptor, params: &ParameterSet, batch: &Tensor) -> Result<Trace> {
    let shapes = arch.validate()?;
    params.check_against(arch)?;
    let n = batch_extent(arch, batch)?;
    let mut acts: Vec<Vec<f32>> = Vec::with_capacity(arch.layers.len() + 1);
    let mut pool_args = vec![None; arch.layers.len()];
    acts.push(batch.data().to_vec());
    for block in &arch.blocks {
        for &i in &block.layers {
            let input = &acts[i];
            let layer = &arch.layers[i];
            let out = match (*layer, shapes[i]) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                        ..
                    },
                    FeatureShape::Image { c, h, w },
                ) => {
                    let geom = ConvGeom::new((c, h, w), out_channels, (kernel_h, kernel_w), stride, padding)?;
                    ops::conv_forward(&geom, input, n, params.weight(i)?.data(), Some(params.bias(i)?.data()))
                }
                (
                    LayerSpec::Linear {
                        in_features,
                        out_features,
                    },
                    _,
                ) => ops::linear_forward(
                    input,
                    n,
                    in_features,
                    out_features,
                    params.weight(i)?.data(),
                    Some(params.bias(i)?.data()),
                ),
                (LayerSpec::Relu, _) => ops::relu_forward(input),
                (LayerSpec::MaxPool2d { window, stride }, FeatureShape::Image { c, h, w }) => {
                    let (out, arg) = ops::maxpool_forward(input, n, (c, h, w), window, stride);
                    pool_args[i] = Some(arg);
                    out
                }
                (LayerSpec::Flatten, _) => input.clone(),
                (layer, shape) => {
                    return Err(Error::Shape(format!("layer {i} ({layer}) cannot consume {shape}")));
                }
            };
            if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(layer_name(i, layer), format!("forward produced {bad}")));
            }
            acts.push(out);
        }
        if block.is_residual() {
            let (head, tail) = acts.split_at_mut(block.last() + 1);
            let skip = &head[block.first()];
            for (o, &s) in tail[0].iter_mut().zip(skip) {
                *o += s;
            }
        }
    }
    Ok(Trace {
        n,
        shapes,
        acts,
        pool_args,
    })
}

/// Runs the network on a `(n, C, H, W)` batch and returns `(n, classes)` logits.
pub fn model_forward(arch: &ArchitectureDescriptor, params: &ParameterSet, batch: &Tensor) -> Result<Tensor> {
    let trace = forward_trace(arch, params, batch)?;
    let classes = trace.shapes.last().expect("validated").numel();
    let logits = trace.acts.into_iter().last().expect("non-empty");
    Tensor::new(vec![trace.n, classes], logits)
}

/// Mean softmax cross-entropy on the batch and its gradient with respect to
/// every parameter.
pub fn model_backward(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, ParameterSet)> {
    let trace = forward_trace(arch, params, batch)?;
    let n = trace.n;
    let classes = trace.shapes.last().expect("validated").numel();
    let (loss, mut grad) = ops::softmax_cross_entropy(trace.acts.last().expect("non-empty"), n, classes, labels)?;

    let mut grads = ParameterSet::new();
    for block in arch.blocks.iter().rev() {
        let block_out_grad = block.is_residual().then(|| grad.clone());
        for &i in block.layers.iter().rev() {
            let layer = &arch.layers[i];
            let input = &trace.acts[i];
            let want_input = i > 0;
            grad = match (*layer, trace.shapes[i]) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                        ..
                    },
                    FeatureShape::Image { c, h, w },
                ) => {
                    let geom = ConvGeom::new((c, h, w), out_channels, (kernel_h, kernel_w), stride, padding)?;
                    let weight = params.weight(i)?;
                    let mut gw = vec![0.0f64; weight.len()];
                    let mut gb = vec![0.0f64; out_channels];
                    let gin = ops::conv_backward(&geom, input, n, weight.data(), &grad, &mut gw, &mut gb, want_input);
                    store_grads(&mut grads, i, layer, weight.shape(), gw, gb)?;
                    gin.unwrap_or_default()
                }
                (
                    LayerSpec::Linear {
                        in_features,
                        out_features,
                    },
                    _,
                ) => {
                    let weight = params.weight(i)?;
                    let mut gw = vec![0.0f64; weight.len()];
                    let mut gb = vec![0.0f64; out_features];
                    let gin = ops::linear_backward(
                        input,
                        n,
                        in_features,
                        out_features,
                        weight.data(),
                        &grad,
                        &mut gw,
                        &mut gb,
                        want_input,
                    );
                    store_grads(&mut grads, i, layer, weight.shape(), gw, gb)?;
                    gin.unwrap_or_default()
                }
                (LayerSpec::Relu, _) => ops::relu_backward(input, &grad),
                (LayerSpec::MaxPool2d { .. }, _) => {
                    let arg = trace.pool_args[i].as_ref().expect("recorded in forward");
                    ops::maxpool_backward(input.len(), arg, &grad)
                }
                (LayerSpec::Flatten, _) => grad,
                (layer, shape) => {
                    return Err(Error::Shape(format!("layer {i} ({layer}) cannot consume {shape}")));
                }
            };
            if let Some(bad) = grad.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(layer_name(i, layer), format!("backward produced {bad}")));
            }
        }
        if let Some(skip) = block_out_grad {
            if !grad.is_empty() {
                for (g, s) in grad.iter_mut().zip(skip) {
                    *g += s;
                }
            }
        }
    }
    Ok((loss, grads))
}

fn store_grads(
    grads: &mut ParameterSet,
    i: usize,
    layer: &LayerSpec,
    weight_shape: &[usize],
    gw: Vec<f64>,
    gb: Vec<f64>,
) -> Result<()> {
    if gw.iter().chain(&gb).any(|v| !v.is_finite()) {
        return Err(Error::numeric(layer_name(i, layer), "non-finite parameter gradient"));
    }
    grads.insert(
        weight_key(i),
        Tensor::new(weight_shape.to_vec(), gw.into_iter().map(|v| v as f32).collect())?,
    );
    grads.insert(bias_key(i), Tensor::vector(gb.into_iter().map(|v| v as f32).collect())?);
    Ok(())
}

/// Index of the largest logit in each row (first one on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = *logits.shape().last().expect("rank >= 1");
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
