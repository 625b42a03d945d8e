//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numeric kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsp_core::nn::{bias_key, weight_key, ArchitectureDescriptor, Block, LayerSpec, ParameterSet};
use rsp_core::optim::LogisticProblem;

/// Direct six-loop cross-correlation on one `(C, H, W)` sample with
/// explicit zero padding. `kernel` is `(K, C, Hk, Wk)` row-major.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    (k, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    ops: &mut u64,
) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                padded[(ci * ph + y + pad) * pw + x + pad] = input[(ci * h + y) * w + x];
            }
        }
    }
    let ho = (ph - kh) / stride + 1;
    let wo = (pw - kw) / stride + 1;
    let mut out = vec![0.0; k * ho * wo];
    for o in 0..k {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let wv = kernel[((o * c + ci) * kh + i) * kw + j];
                            let xv = padded[(ci * ph + y * stride + i) * pw + x * stride + j];
                            acc += wv * xv;
                            *ops += 2;
                        }
                    }
                }
                out[(o * ho + y) * wo + x] = acc;
            }
        }
    }
    (out, ho, wo)
}

/// Plain forward pass of one sample through an architecture, in `f64`,
/// counting every multiply and add executed inside conv and linear layers.
pub fn naive_forward(arch: &ArchitectureDescriptor, params: &ParameterSet, sample: &[f32], ops: &mut u64) -> Vec<f64> {
    let mut margin = f64::INFINITY;
    forward_tracking_kinks(arch, params, sample, ops, &mut margin)
}

/// Smallest distance of any ReLU input from zero, or of any max-pool
/// winner from its runner-up, over the given samples. Finite differences
/// are only meaningful when the step cannot cross such a kink.
pub fn kink_margin(arch: &ArchitectureDescriptor, params: &ParameterSet, samples: &[Vec<f32>]) -> f64 {
    let mut margin = f64::INFINITY;
    let mut ops = 0;
    for x in samples {
        forward_tracking_kinks(arch, params, x, &mut ops, &mut margin);
    }
    margin
}

fn forward_tracking_kinks(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    sample: &[f32],
    ops: &mut u64,
    margin: &mut f64,
) -> Vec<f64> {
    let [c0, h0, w0] = arch.input_shape;
    let mut x: Vec<f64> = sample.iter().map(|&v| v as f64).collect();
    let (mut c, mut h, mut w) = (c0, h0, w0);
    let get = |key: String| -> Vec<f64> { params.get(&key).unwrap().data().iter().map(|&v| v as f64).collect() };
    for block in &arch.blocks {
        let skip = block.is_residual().then(|| x.clone());
        for &i in &block.layers {
            match arch.layers[i] {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    ..
                } => {
                    let (y, ho, wo) = naive_conv(
                        &x,
                        (c, h, w),
                        &get(weight_key(i)),
                        (out_channels, kernel_h, kernel_w),
                        Some(&get(bias_key(i))),
                        stride,
                        padding,
                        ops,
                    );
                    x = y;
                    (c, h, w) = (out_channels, ho, wo);
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let wt = get(weight_key(i));
                    let b = get(bias_key(i));
                    x = (0..out_features)
                        .map(|o| {
                            let mut acc = b[o];
                            for j in 0..in_features {
                                acc += wt[o * in_features + j] * x[j];
                                *ops += 2;
                            }
                            acc
                        })
                        .collect();
                    (c, h, w) = (out_features, 1, 1);
                }
                LayerSpec::Relu => x.iter_mut().for_each(|v| {
                    *margin = margin.min(v.abs());
                    *v = v.max(0.0)
                }),
                LayerSpec::MaxPool2d { window, stride } => {
                    let ho = (h - window) / stride + 1;
                    let wo = (w - window) / stride + 1;
                    let mut y = vec![f64::NEG_INFINITY; c * ho * wo];
                    for ci in 0..c {
                        for a in 0..ho {
                            for b in 0..wo {
                                let mut top = [f64::NEG_INFINITY; 2];
                                for i in 0..window {
                                    for j in 0..window {
                                        let v = x[(ci * h + a * stride + i) * w + b * stride + j];
                                        if v > top[0] {
                                            top = [v, top[0]];
                                        } else if v > top[1] {
                                            top[1] = v;
                                        }
                                    }
                                }
                                y[(ci * ho + a) * wo + b] = top[0];
                                if window * window > 1 {
                                    *margin = margin.min(top[0] - top[1]);
                                }
                            }
                        }
                    }
                    x = y;
                    (h, w) = (ho, wo);
                }
                LayerSpec::Flatten => {
                    (c, h, w) = (c * h * w, 1, 1);
                }
            }
        }
        if let Some(s) = skip {
            for (a, b) in x.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    x
}

/// Mean cross-entropy and accuracy computed one sample at a time.
pub fn per_sample_loss_and_accuracy(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    split: &rsp_core::data::Split,
) -> (f64, f64) {
    let mut loss = 0.0;
    let mut hits = 0;
    let mut ops = 0;
    for i in 0..split.len() {
        let z = naive_forward(arch, params, split.sample(i), &mut ops);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[split.labels[i]];
        let mut best = 0;
        for (k, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = k;
            }
        }
        if best == split.labels[i] {
            hits += 1;
        }
    }
    (loss / split.len() as f64, hits as f64 / split.len() as f64)
}

/// Deterministic full-batch proximal gradient (ISTA) with step `1/L`,
/// `L` bounding the logistic Hessian by `||X||_2^2 / (4n)`. Stops when the
/// iterate moves less than `tol` in max norm.
pub fn ista(problem: &LogisticProblem, lambda: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = problem.y.len();
    let d = problem.features;
    let all: Vec<usize> = (0..n).collect();
    // power iteration on X^T X
    let mut v = vec![1.0; d];
    let mut sigma2 = 0.0;
    for _ in 0..200 {
        let xv: Vec<f64> = (0..n).map(|i| (0..d).map(|j| problem.x[i * d + j] * v[j]).sum()).collect();
        let mut xtxv = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                xtxv[j] += problem.x[i * d + j] * xv[i];
            }
        }
        let norm = xtxv.iter().map(|a| a * a).sum::<f64>().sqrt();
        sigma2 = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = xtxv.iter().map(|a| a / norm).collect();
    }
    let step = 1.0 / (sigma2 * 1.01 / (4.0 * n as f64));
    let mut w = vec![0.0; d];
    for _ in 0..max_iter {
        let (_, g) = problem.loss_grad_f64(&w, &all);
        let next: Vec<f64> = w
            .iter()
            .zip(&g)
            .map(|(wi, gi)| {
                let z = wi - step * gi;
                z.signum() * (z.abs() - step * lambda).max(0.0)
            })
            .collect();
        let moved = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if moved < tol {
            break;
        }
    }
    w
}

pub fn objective(problem: &LogisticProblem, w: &[f64], lambda: f64) -> f64 {
    let all: Vec<usize> = (0..problem.y.len()).collect();
    problem.loss_grad_f64(w, &all).0 + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn support(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] != 0.0).collect()
}

/// Best `k`-subset by summed norm, by enumerating all subsets.
pub fn brute_force_top_k(norms: &[f64], k: usize) -> Vec<usize> {
    let n = norms.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sum: f64 = set.iter().map(|&i| norms[i]).sum();
        // prefer larger sums, then the lexicographically smallest index set
        let better = match &best {
            None => true,
            Some((s, b)) => sum > *s || (sum == *s && set < *b),
        };
        if better {
            best = Some((sum, set));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

/// A random small architecture that validates: a few conv stages (some
/// wrapped as residual blocks), optional pooling, then a linear head.
pub fn random_arch(rng: &mut ChaCha8Rng) -> ArchitectureDescriptor {
    loop {
        let c0 = rng.random_range(1..=3);
        let side = rng.random_range(4..=9);
        let mut layers = Vec::new();
        let mut blocks = Vec::new();
        let (mut c, mut h) = (c0, side);
        for _ in 0..rng.random_range(1..=3) {
            let k = rng.random_range(1..=3.min(h));
            let pad = rng.random_range(0..=1);
            let stride = if rng.random_bool(0.2) { 2 } else { 1 };
            let out = rng.random_range(1..=6);
            let ho = (h + 2 * pad - k) / stride + 1;
            if ho == 0 || h + 2 * pad < k {
                break;
            }
            blocks.push(Block::plain(layers.len()));
            layers.push(LayerSpec::conv(c, out, k, stride, pad));
            blocks.push(Block::plain(layers.len()));
            layers.push(LayerSpec::Relu);
            c = out;
            h = ho;
            if rng.random_bool(0.4) {
                // same-shape residual branch
                let mid = rng.random_range(1..=6);
                let first = layers.len();
                layers.push(LayerSpec::conv(c, mid, 3, 1, 1));
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::conv(mid, c, 1, 1, 0));
                blocks.push(Block::residual(first..layers.len()));
            }
            if h >= 2 && rng.random_bool(0.3) {
                blocks.push(Block::plain(layers.len()));
                layers.push(LayerSpec::max_pool(2, 2));
                h = (h - 2) / 2 + 1;
            }
        }
        blocks.push(Block::plain(layers.len()));
        layers.push(LayerSpec::Flatten);
        let mut feat = c * h * h;
        if rng.random_bool(0.5) {
            let hidden = rng.random_range(2..=8);
            blocks.push(Block::plain(layers.len()));
            layers.push(LayerSpec::linear(feat, hidden));
            blocks.push(Block::plain(layers.len()));
            layers.push(LayerSpec::Relu);
            feat = hidden;
        }
        blocks.push(Block::plain(layers.len()));
        layers.push(LayerSpec::linear(feat, rng.random_range(2..=4)));
        let arch = ArchitectureDescriptor {
            input_shape: [c0, side, side],
            layers,
            blocks,
        };
        if arch.validate().is_ok() {
            return arch;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters with a random fraction of exact zeros per layer.
pub fn random_sparse_params(arch: &ArchitectureDescriptor, rng: &mut ChaCha8Rng) -> ParameterSet {
    let mut p = ParameterSet::init(arch, rng.random()).unwrap();
    for i in arch.prunable_layers() {
        let frac: f64 = rng.random();
        for v in p.get_mut(&weight_key(i)).unwrap().data_mut() {
            if rng.random_bool(frac) {
                *v = 0.0;
            }
        }
    }
    p
}

/// Mean softmax cross-entropy of a batch, in `f64`, through [`naive_forward`].
pub fn oracle_loss(arch: &ArchitectureDescriptor, params: &ParameterSet, samples: &[Vec<f32>], labels: &[usize]) -> f64 {
    let mut ops = 0;
    let mut total = 0.0;
    for (x, &y) in samples.iter().zip(labels) {
        let z = naive_forward(arch, params, x, &mut ops);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[y];
    }
    total / samples.len() as f64
}

/// Central differences of [`oracle_loss`] for every entry of `key`, using
/// the step actually realised in `f32` so rounding of `w +- h` is exact.
pub fn finite_difference(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    key: &str,
    samples: &[Vec<f32>],
    labels: &[usize],
    h: f32,
) -> Vec<f64> {
    let n = params.get(key).unwrap().len();
    let mut p = params.clone();
    (0..n)
        .map(|j| {
            let w = params.get(key).unwrap().data()[j];
            let (up, down) = (w + h, w - h);
            p.get_mut(key).unwrap().data_mut()[j] = up;
            let lp = oracle_loss(arch, &p, samples, labels);
            p.get_mut(key).unwrap().data_mut()[j] = down;
            let lm = oracle_loss(arch, &p, samples, labels);
            p.get_mut(key).unwrap().data_mut()[j] = w;
            (lp - lm) / (up as f64 - down as f64)
        })
        .collect()
}

/// `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Random inputs and labels for an architecture.
pub fn random_batch(arch: &ArchitectureDescriptor, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<usize>) {
    let len: usize = arch.input_shape.iter().product();
    let classes = arch.class_count().unwrap();
    let samples = (0..n).map(|_| (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (samples, labels)
}

/// Stacks samples into a `(n, C, H, W)` tensor.
pub fn stack(arch: &ArchitectureDescriptor, samples: &[Vec<f32>]) -> rsp_core::tensor::Tensor {
    let [c, h, w] = arch.input_shape;
    rsp_core::tensor::Tensor::new(vec![samples.len(), c, h, w], samples.concat()).unwrap()
}

pub const LAYER_KINDS: [&str; 5] = ["conv", "linear", "relu", "maxpool", "residual"];

/// A small network exercising one layer kind, with a linear head.
pub fn gradient_instance(kind: &str, rng: &mut ChaCha8Rng) -> (ArchitectureDescriptor, ParameterSet) {
    let c = rng.random_range(1..=3);
    let side = rng.random_range(4..=6);
    let classes = rng.random_range(2..=4);
    let k = rng.random_range(1..=3);
    let pad = rng.random_range(0..=1);
    let stride = rng.random_range(1..=2);
    let out = rng.random_range(1..=4);
    let conv_side = (side + 2 * pad - k) / stride + 1;
    let arch = match kind {
        "conv" => ArchitectureDescriptor::sequential(
            [c, side, side],
            vec![
                LayerSpec::conv(c, out, k, stride, pad),
                LayerSpec::Flatten,
                LayerSpec::linear(out * conv_side * conv_side, classes),
            ],
        ),
        "linear" => {
            let hidden = rng.random_range(2..=6);
            ArchitectureDescriptor::sequential(
                [c, side, side],
                vec![
                    LayerSpec::Flatten,
                    LayerSpec::linear(c * side * side, hidden),
                    LayerSpec::linear(hidden, classes),
                ],
            )
        }
        "relu" => {
            let hidden = rng.random_range(2..=6);
            ArchitectureDescriptor::sequential(
                [c, side, side],
                vec![
                    LayerSpec::conv(c, out, k, stride, pad),
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::linear(out * conv_side * conv_side, hidden),
                    LayerSpec::Relu,
                    LayerSpec::linear(hidden, classes),
                ],
            )
        }
        "maxpool" => {
            let ps = rng.random_range(1..=2);
            let pooled = (side - 2) / ps + 1;
            ArchitectureDescriptor::sequential(
                [c, side, side],
                vec![
                    LayerSpec::conv(c, out, 3, 1, 1),
                    LayerSpec::max_pool(2, ps),
                    LayerSpec::Flatten,
                    LayerSpec::linear(out * pooled * pooled, classes),
                ],
            )
        }
        "residual" => {
            let mid = rng.random_range(1..=4);
            let layers = vec![
                LayerSpec::conv(c, out, 3, 1, 1),
                LayerSpec::conv(out, mid, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::conv(mid, out, 1, 1, 0),
                LayerSpec::Flatten,
                LayerSpec::linear(out * side * side, classes),
            ];
            let blocks = vec![Block::plain(0), Block::residual(1..4), Block::plain(4), Block::plain(5)];
            Ok(ArchitectureDescriptor {
                input_shape: [c, side, side],
                layers,
                blocks,
            })
        }
        other => panic!("unknown layer kind {other}"),
    }
    .unwrap();
    arch.validate().unwrap();
    let mut params = ParameterSet::init(&arch, rng.random()).unwrap();
    // zero biases would park dead units exactly on the ReLU kink
    for i in arch.prunable_layers() {
        for b in params.get_mut(&bias_key(i)).unwrap().data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    (arch, params)
}

/// Largest relative error between the library gradient and central
/// differences over all parameter tensors.
pub fn gradient_error(arch: &ArchitectureDescriptor, params: &ParameterSet, samples: &[Vec<f32>], labels: &[usize], h: f32) -> f64 {
    let (_, grads) = rsp_core::nn::model::model_backward(arch, params, &stack(arch, samples), labels).unwrap();
    let mut worst = 0.0f64;
    for (key, g) in grads.iter() {
        let analytic: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
        let numeric = finite_difference(arch, params, key, samples, labels, h);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Smallest kink margin accepted for a finite-difference instance.
pub const KINK_MARGIN: f64 = 1e-2;

/// A gradient-check instance (network, parameters, batch) whose ReLU
/// inputs and pooling winners all sit at least [`KINK_MARGIN`] away from
/// a kink. Instances that do not are redrawn.
pub fn smooth_gradient_case(
    kind: &str,
    rng: &mut ChaCha8Rng,
) -> (ArchitectureDescriptor, ParameterSet, Vec<Vec<f32>>, Vec<usize>) {
    loop {
        let (arch, params) = gradient_instance(kind, rng);
        let (x, y) = random_batch(&arch, 2, rng);
        if kink_margin(&arch, &params, &x) >= KINK_MARGIN {
            return (arch, params, x, y);
        }
    }
}
