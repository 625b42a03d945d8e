//! Smooth losses `f` that the sparse optimizer minimizes, and evaluation of
//! the regularized objective `F = f + lambda * ||w||_1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::nn::model::{argmax_rows, model_backward, model_forward};
use crate::nn::{ArchitectureDescriptor, ParameterSet};
use crate::tensor::Tensor;

/// Samples per forward pass when evaluating whole splits.
pub const EVAL_CHUNK: usize = 500;

/// A finite-sum smooth loss.
pub trait Objective {
    fn n_samples(&self) -> usize;

    /// Mean loss over `indices` and its gradient.
    fn loss_grad(&self, params: &ParameterSet, indices: &[usize]) -> Result<(f64, ParameterSet)>;

    /// Mean loss over all samples.
    fn full_loss(&self, params: &ParameterSet) -> Result<f64> {
        let all: Vec<usize> = (0..self.n_samples()).collect();
        Ok(self.loss_grad(params, &all)?.0)
    }

    fn validation_accuracy(&self, _params: &ParameterSet) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Softmax cross-entropy of a network on a training split.
pub struct NetworkObjective<'a> {
    pub arch: &'a ArchitectureDescriptor,
    pub train: &'a Split,
    pub validation: Option<&'a Split>,
}

impl Objective for NetworkObjective<'_> {
    fn n_samples(&self) -> usize {
        self.train.len()
    }

    fn loss_grad(&self, params: &ParameterSet, indices: &[usize]) -> Result<(f64, ParameterSet)> {
        let (batch, labels) = self.train.batch(indices)?;
        model_backward(self.arch, params, &batch, &labels)
    }

    fn full_loss(&self, params: &ParameterSet) -> Result<f64> {
        split_loss(self.arch, params, self.train)
    }

    fn validation_accuracy(&self, params: &ParameterSet) -> Result<Option<f64>> {
        self.validation
            .filter(|v| !v.is_empty())
            .map(|v| split_accuracy(self.arch, params, v))
            .transpose()
    }
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(EVAL_CHUNK).map(move |s| (s..(s + EVAL_CHUNK).min(n)).collect())
}

/// Mean cross-entropy over a split.
pub fn split_loss(arch: &ArchitectureDescriptor, params: &ParameterSet, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate the loss of an empty split".into()));
    }
    let classes = arch.class_count()?;
    let mut total = 0.0;
    for idx in chunks(split.len()) {
        let (batch, labels) = split.batch(&idx)?;
        let logits = model_forward(arch, params, &batch)?;
        let (loss, _) = crate::nn::ops::softmax_cross_entropy(logits.data(), idx.len(), classes, &labels)?;
        total += loss * idx.len() as f64;
    }
    Ok(total / split.len() as f64)
}

/// Predicted class for every sample of a split.
pub fn split_predictions(arch: &ArchitectureDescriptor, params: &ParameterSet, split: &Split) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(split.len());
    for idx in chunks(split.len()) {
        let (batch, _) = split.batch(&idx)?;
        preds.extend(argmax_rows(&model_forward(arch, params, &batch)?));
    }
    Ok(preds)
}

/// Top-1 accuracy over a split.
pub fn split_accuracy(arch: &ArchitectureDescriptor, params: &ParameterSet, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate accuracy on an empty split".into()));
    }
    let preds = split_predictions(arch, params, split)?;
    let hits = preds.iter().zip(&split.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / split.len() as f64)
}

/// Regularized objective value and its parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    /// `f + lambda * l1`.
    pub total: f64,
    pub loss: f64,
    pub l1: f64,
    /// Exact-zero ratio of each weight tensor, by parameter name.
    pub layer_sparsity: Vec<(String, f64)>,
}

pub fn layer_sparsity(params: &ParameterSet) -> Vec<(String, f64)> {
    params
        .weights()
        .map(|(k, t)| (k.clone(), t.count_zeros() as f64 / t.len() as f64))
        .collect()
}

/// Evaluates `F = f + lambda * ||w||_1` for any objective.
pub fn evaluate_with(objective: &dyn Objective, params: &ParameterSet, lambda: f64) -> Result<ObjectiveReport> {
    let loss = objective.full_loss(params)?;
    let l1 = params.weight_l1();
    Ok(ObjectiveReport {
        total: loss + lambda * l1,
        loss,
        l1,
        layer_sparsity: layer_sparsity(params),
    })
}

/// `F`, `f`, `||w||_1` and per-layer sparsity of a network on a split.
pub fn evaluate_objective(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    split: &Split,
    lambda: f64,
) -> Result<ObjectiveReport> {
    let obj = NetworkObjective {
        arch,
        train: split,
        validation: None,
    };
    evaluate_with(&obj, params, lambda)
}

/// Binary logistic regression without intercept, the convex test bed for
/// the sparse optimizers. Parameters: a single `logistic.weight` vector.
#[derive(Clone, Debug)]
pub struct LogisticProblem {
    pub features: usize,
    /// Row-major `n x features` design matrix.
    pub x: Vec<f64>,
    /// Labels in `{-1, +1}`.
    pub y: Vec<f64>,
}

pub const LOGISTIC_KEY: &str = "logistic.weight";

impl LogisticProblem {
    pub fn new(features: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if features == 0 || x.len() != features * y.len() {
            return Err(Error::Shape(format!(
                "{} design entries do not form {} rows of {features} features",
                x.len(),
                y.len()
            )));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidArgument("logistic labels must be -1 or +1".into()));
        }
        Ok(Self { features, x, y })
    }

    /// Gaussian design with a planted sparse coefficient vector. Returns the
    /// problem and the planted coefficients. Nonzero coefficients have
    /// magnitude in `[1.5, 2.5]` with random signs; labels are drawn from
    /// the logistic model.
    pub fn synthetic(seed: u64, samples: usize, features: usize, nonzeros: usize) -> Result<(Self, Vec<f64>)> {
        if nonzeros > features {
            return Err(Error::InvalidArgument(format!("{nonzeros} nonzeros exceed {features} features")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth = vec![0.0; features];
        let mut slots: Vec<usize> = (0..features).collect();
        for k in 0..nonzeros {
            let j = rng.random_range(k..features);
            slots.swap(k, j);
            let mag = rng.random_range(1.5..2.5);
            truth[slots[k]] = if rng.random_bool(0.5) { mag } else { -mag };
        }
        let x: Vec<f64> = (0..samples * features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = (0..samples)
            .map(|i| {
                let margin: f64 = x[i * features..(i + 1) * features].iter().zip(&truth).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-margin).exp());
                if rng.random_bool(p) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Ok((Self::new(features, x, y)?, truth))
    }

    pub fn zero_params(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(LOGISTIC_KEY, Tensor::zeros(&[self.features]).expect("features >= 1"));
        p
    }

    pub fn coefficients(params: &ParameterSet) -> Result<Vec<f64>> {
        params
            .get(LOGISTIC_KEY)
            .map(|t| t.data().iter().map(|&v| v as f64).collect())
            .ok_or_else(|| Error::Shape(format!("missing {LOGISTIC_KEY}")))
    }

    /// Mean logistic loss and gradient at `w`, in `f64`.
    pub fn loss_grad_f64(&self, w: &[f64], indices: &[usize]) -> (f64, Vec<f64>) {
        let d = self.features;
        let mut loss = 0.0;
        let mut grad = vec![0.0; d];
        for &i in indices {
            let row = &self.x[i * d..(i + 1) * d];
            let m = self.y[i] * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            // log(1 + exp(-m)), stable for both signs
            loss += if m > 0.0 { (-m).exp().ln_1p() } else { -m + m.exp().ln_1p() };
            let s = -self.y[i] / (1.0 + m.exp());
            for (g, &xv) in grad.iter_mut().zip(row) {
                *g += s * xv;
            }
        }
        let inv = 1.0 / indices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (loss * inv, grad)
    }
}

impl Objective for LogisticProblem {
    fn n_samples(&self) -> usize {
        self.y.len()
    }

    fn loss_grad(&self, params: &ParameterSet, indices: &[usize]) -> Result<(f64, ParameterSet)> {
        let w = Self::coefficients(params)?;
        if w.len() != self.features {
            return Err(Error::Shape(format!("{} coefficients for {} features", w.len(), self.features)));
        }
        let (loss, grad) = self.loss_grad_f64(&w, indices);
        let mut g = ParameterSet::new();
        g.insert(LOGISTIC_KEY, Tensor::vector(grad.into_iter().map(|v| v as f32).collect())?);
        Ok((loss, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{weight_key, LayerSpec};

    #[test]
    fn all_zero_params_are_fully_sparse() {
        let arch = ArchitectureDescriptor::sequential(
            [1, 3, 3],
            vec![LayerSpec::conv(1, 2, 2, 1, 0), LayerSpec::Flatten, LayerSpec::linear(8, 3)],
        )
        .unwrap();
        let params = ParameterSet::zeros(&arch).unwrap();
        let split = Split::new([1, 3, 3], vec![0.5; 18], vec![0, 2]).unwrap();
        let r = evaluate_objective(&arch, &params, &split, 0.1).unwrap();
        assert_eq!(r.l1, 0.0);
        assert!(r.layer_sparsity.iter().all(|(_, s)| *s == 1.0));
        assert!((r.loss - 3f64.ln()).abs() < 1e-9);
        assert_eq!(r.total, r.loss);
    }

    #[test]
    fn l1_of_simple_entries() {
        let arch = ArchitectureDescriptor::sequential([2, 1, 1], vec![LayerSpec::Flatten, LayerSpec::linear(2, 1)]).unwrap();
        let mut params = ParameterSet::zeros(&arch).unwrap();
        params.get_mut(&weight_key(1)).unwrap().data_mut().copy_from_slice(&[1.0, -2.0]);
        let split = Split::new([2, 1, 1], vec![0.0, 0.0], vec![0]).unwrap();
        let r = evaluate_objective(&arch, &params, &split, 0.5).unwrap();
        assert_eq!(r.l1, 3.0);
        assert!((r.total - (r.loss + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn logistic_gradient_matches_finite_difference() {
        let (p, _) = LogisticProblem::synthetic(1, 30, 4, 2).unwrap();
        let w = [0.3, -0.2, 0.1, 0.5];
        let idx: Vec<usize> = (0..30).collect();
        let (_, g) = p.loss_grad_f64(&w, &idx);
        for j in 0..4 {
            let h = 1e-6;
            let mut wp = w;
            let mut wm = w;
            wp[j] += h;
            wm[j] -= h;
            let fd = (p.loss_grad_f64(&wp, &idx).0 - p.loss_grad_f64(&wm, &idx).0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7, "coord {j}: {fd} vs {}", g[j]);
        }
    }
}
