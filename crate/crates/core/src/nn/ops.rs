//! Per-layer forward and backward kernels.
//!
//! Activations are batch-major `f32` buffers. Every reduction accumulates in
//! `f64` and the loop order is fixed, so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::nn::arch::conv_extent;
use crate::tensor::Tensor;

/// Geometry of a single 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        (in_c, in_h, in_w): (usize, usize, usize),
        out_c: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("stride must be >= 1".into()));
        }
        let out_h = conv_extent(in_h, kh, stride, pad).ok_or_else(|| {
            Error::Shape(format!(
                "non-positive output height: input {in_h} + 2*{pad} padding < kernel {kh}"
            ))
        })?;
        let out_w = conv_extent(in_w, kw, stride, pad).ok_or_else(|| {
            Error::Shape(format!(
                "non-positive output width: input {in_w} + 2*{pad} padding < kernel {kw}"
            ))
        })?;
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    /// Rows of the unfolded patch matrix (`C * Hk * Wk`).
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    /// Output positions per channel (`Ho * Wo`).
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.positions()
    }

    /// Unfolds one `(C, H, W)` sample into a `(C*Hk*Wk, Ho*Wo)` patch matrix.
    pub fn im2col(&self, input: &[f32], cols: &mut [f32]) {
        let p_len = self.positions();
        let mut row = 0;
        for c in 0..self.in_c {
            let plane = &input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let dst = &mut cols[row * p_len..(row + 1) * p_len];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + dy) as isize - self.pad as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + dx) as isize - self.pad as isize;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && (iy as usize) < self.in_h
                                && ix >= 0
                                && (ix as usize) < self.in_w
                            {
                                plane[iy as usize * self.in_w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Folds patch-matrix gradients back onto the input grid (adjoint of `im2col`).
    pub fn col2im(&self, cols: &[f64], grad_input: &mut [f64]) {
        let p_len = self.positions();
        let mut row = 0;
        for c in 0..self.in_c {
            let plane = &mut grad_input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let src = &cols[row * p_len..(row + 1) * p_len];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + dy) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.in_h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + dx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                plane[iy as usize * self.in_w + ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Batched convolution forward. `input` is `(n, C, H, W)` batch-major,
/// `weight` is `(K, C*Hk*Wk)` row-major; returns `(n, K, Ho, Wo)`.
pub fn conv_forward(geom: &ConvGeom, input: &[f32], n: usize, weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let (in_len, out_len) = (geom.in_len(), geom.out_len());
    let (j_len, p_len) = (geom.patch_len(), geom.positions());
    let mut out = vec![0.0f32; n * out_len];
    let mut cols = vec![0.0f32; j_len * p_len];
    let mut acc = vec![0.0f64; p_len];
    for s in 0..n {
        geom.im2col(&input[s * in_len..(s + 1) * in_len], &mut cols);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        for k in 0..geom.out_c {
            acc.fill(bias.map_or(0.0, |b| b[k] as f64));
            let w_row = &weight[k * j_len..(k + 1) * j_len];
            for (j, &w) in w_row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let w = w as f64;
                let col = &cols[j * p_len..(j + 1) * p_len];
                for (a, &x) in acc.iter_mut().zip(col) {
                    *a += w * x as f64;
                }
            }
            for (d, &a) in dst[k * p_len..(k + 1) * p_len].iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    }
    out
}

/// Batched convolution backward. Accumulates into `grad_w` (`K x C*Hk*Wk`)
/// and `grad_b` (`K`), and returns the input gradient when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    geom: &ConvGeom,
    input: &[f32],
    n: usize,
    weight: &[f32],
    grad_out: &[f32],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f32>> {
    let (in_len, out_len) = (geom.in_len(), geom.out_len());
    let (j_len, p_len) = (geom.patch_len(), geom.positions());
    let mut cols = vec![0.0f32; j_len * p_len];
    let mut dcols = vec![0.0f64; j_len * p_len];
    let mut dinput = vec![0.0f64; in_len];
    let mut grad_in = want_input_grad.then(|| vec![0.0f32; n * in_len]);
    for s in 0..n {
        geom.im2col(&input[s * in_len..(s + 1) * in_len], &mut cols);
        let g = &grad_out[s * out_len..(s + 1) * out_len];
        for k in 0..geom.out_c {
            let gk = &g[k * p_len..(k + 1) * p_len];
            grad_b[k] += gk.iter().map(|&v| v as f64).sum::<f64>();
            let gw = &mut grad_w[k * j_len..(k + 1) * j_len];
            for (j, slot) in gw.iter_mut().enumerate() {
                let col = &cols[j * p_len..(j + 1) * p_len];
                *slot += col.iter().zip(gk).map(|(&x, &d)| x as f64 * d as f64).sum::<f64>();
            }
        }
        if let Some(grad_in) = grad_in.as_mut() {
            dcols.fill(0.0);
            for k in 0..geom.out_c {
                let gk = &g[k * p_len..(k + 1) * p_len];
                let w_row = &weight[k * j_len..(k + 1) * j_len];
                for (j, &w) in w_row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let w = w as f64;
                    let dst = &mut dcols[j * p_len..(j + 1) * p_len];
                    for (d, &v) in dst.iter_mut().zip(gk) {
                        *d += w * v as f64;
                    }
                }
            }
            dinput.fill(0.0);
            geom.col2im(&dcols, &mut dinput);
            for (d, &v) in grad_in[s * in_len..(s + 1) * in_len].iter_mut().zip(&dinput) {
                *d = v as f32;
            }
        }
    }
    grad_in
}

/// `out[s, o] = bias[o] + sum_i weight[o, i] * input[s, i]`.
pub fn linear_forward(input: &[f32], n: usize, in_f: usize, out_f: usize, weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let mut out = vec![0.0f32; n * out_f];
    for s in 0..n {
        let x = &input[s * in_f..(s + 1) * in_f];
        for o in 0..out_f {
            let w = &weight[o * in_f..(o + 1) * in_f];
            let dot: f64 = w.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum();
            out[s * out_f + o] = (dot + bias.map_or(0.0, |b| b[o] as f64)) as f32;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    input: &[f32],
    n: usize,
    in_f: usize,
    out_f: usize,
    weight: &[f32],
    grad_out: &[f32],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f32>> {
    for s in 0..n {
        let x = &input[s * in_f..(s + 1) * in_f];
        for o in 0..out_f {
            let g = grad_out[s * out_f + o] as f64;
            grad_b[o] += g;
            if g == 0.0 {
                continue;
            }
            for (gw, &xi) in grad_w[o * in_f..(o + 1) * in_f].iter_mut().zip(x) {
                *gw += g * xi as f64;
            }
        }
    }
    if !want_input_grad {
        return None;
    }
    let mut grad_in = vec![0.0f32; n * in_f];
    let mut acc = vec![0.0f64; in_f];
    for s in 0..n {
        acc.fill(0.0);
        for o in 0..out_f {
            let g = grad_out[s * out_f + o] as f64;
            if g == 0.0 {
                continue;
            }
            for (a, &w) in acc.iter_mut().zip(&weight[o * in_f..(o + 1) * in_f]) {
                *a += g * w as f64;
            }
        }
        for (d, &a) in grad_in[s * in_f..(s + 1) * in_f].iter_mut().zip(&acc) {
            *d = a as f32;
        }
    }
    Some(grad_in)
}

pub fn relu_forward(input: &[f32]) -> Vec<f32> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(input: &[f32], grad_out: &[f32]) -> Vec<f32> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Max pooling over `(n, c, h, w)`. Returns the pooled values and, for each
/// output, the flat input offset of the chosen maximum (first one on ties).
pub fn maxpool_forward(
    input: &[f32],
    n: usize,
    (c, h, w): (usize, usize, usize),
    window: usize,
    stride: usize,
) -> (Vec<f32>, Vec<usize>) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let at = base + (oy * stride + dy) * w + ox * stride + dx;
                        if input[at] > best {
                            best = input[at];
                            best_at = at;
                        }
                    }
                }
                out.push(input[best_at]);
                arg.push(best_at);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(input_len: usize, argmax: &[usize], grad_out: &[f32]) -> Vec<f32> {
    let mut grad = vec![0.0f64; input_len];
    for (&at, &g) in argmax.iter().zip(grad_out) {
        grad[at] += g as f64;
    }
    grad.into_iter().map(|v| v as f32).collect()
}

/// Mean softmax cross-entropy over the batch, computed in `f64`, together
/// with the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f32], n: usize, classes: usize, labels: &[usize]) -> Result<(f64, Vec<f32>)> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f32; n * classes];
    let inv_n = 1.0 / n as f64;
    let mut probs = vec![0.0f64; classes];
    for s in 0..n {
        let label = labels[s];
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} of sample {s} is out of range for {classes} classes"
            )));
        }
        let z = &logits[s * classes..(s + 1) * classes];
        let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let mut total = 0.0;
        for (p, &v) in probs.iter_mut().zip(z) {
            *p = (v as f64 - max).exp();
            total += *p;
        }
        loss += total.ln() - (z[label] as f64 - max);
        for (c, p) in probs.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            grad[s * classes + c] = ((p / total - target) * inv_n) as f32;
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::numeric("loss", format!("cross-entropy evaluated to {loss}")));
    }
    Ok((loss, grad))
}

/// Standalone 2-D convolution on tensors.
///
/// `input` is `(C, H, W)` or `(N, C, H, W)`; `kernel` is `(K, C, Hk, Wk)`;
/// `bias`, when present, has `K` entries. Uses cross-correlation with
/// symmetric zero padding.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w, batched) = match *input.shape() {
        [c, h, w] => (1, c, h, w, false),
        [n, c, h, w] => (n, c, h, w, true),
        ref s => return Err(Error::Shape(format!("conv2d input must be rank 3 or 4, got shape {s:?}"))),
    };
    let [k, kc, kh, kw] = *kernel.shape() else {
        return Err(Error::Shape(format!("conv2d kernel must be rank 4, got shape {:?}", kernel.shape())));
    };
    if kc != c {
        return Err(Error::Shape(format!(
            "input has {c} channels but kernel expects {kc} (kernel shape {:?})",
            kernel.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::Shape(format!("bias shape {:?} does not match {k} filters", b.shape())));
        }
    }
    let geom = ConvGeom::new((c, h, w), k, (kh, kw), stride, padding)?;
    let out = conv_forward(&geom, input.data(), n, kernel.data(), bias.map(Tensor::data));
    let shape = if batched {
        vec![n, k, geom.out_h, geom.out_w]
    } else {
        vec![k, geom.out_h, geom.out_w]
    };
    Tensor::new(shape, out)
}

/// Views a `(K, C, H, W)` kernel as its `K x (C*H*W)` filter matrix.
pub fn flatten_kernel_matrix(kernel: &Tensor) -> Result<Tensor> {
    let [k, c, h, w] = *kernel.shape() else {
        return Err(Error::Shape(format!(
            "filter matrix needs a rank-4 kernel, got shape {:?}",
            kernel.shape()
        )));
    };
    kernel.clone().reshape(vec![k, c * h * w])
}

/// Inverse of [`flatten_kernel_matrix`].
pub fn unflatten_kernel_matrix(matrix: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let [k, cols] = *matrix.shape() else {
        return Err(Error::Shape(format!("filter matrix must be rank 2, got {:?}", matrix.shape())));
    };
    if cols != c * h * w {
        return Err(Error::Shape(format!("{cols} columns cannot be viewed as {c}x{h}x{w}")));
    }
    matrix.clone().reshape(vec![k, c, h, w])
}
