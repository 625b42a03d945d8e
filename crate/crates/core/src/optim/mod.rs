//! L1-regularized stochastic optimization.
//!
//! Minimizes `F(w) = f(w) + lambda * ||w||_1` where the L1 term covers conv
//! and linear weights only. Two step kinds are provided:
//!
//! - the proximal step `w <- soft_threshold(w - eta * g, eta * lambda)`;
//! - the orthant-face step, which moves along `g + lambda * sign_ref` and
//!   zeroes any coordinate that leaves the orthant of the sign reference
//!   frozen when the phase began.
//!
//! Training alternates a proximal phase (which finds a support) with an
//! orthant phase (which keeps zeros absorbing and removes the residual
//! noise that keeps proximal iterates dense).

pub mod objective;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{is_weight_key, ParameterSet};
use crate::tensor::Tensor;

pub use objective::{
    evaluate_objective, split_accuracy, split_loss, split_predictions, LogisticProblem, NetworkObjective, Objective,
    ObjectiveReport,
};
pub use train::{
    sparse_train, train_sparse, EpochRecord, StepSchedule, SwitchSchedule, TrainConfig, TrainOutcome, TrainStatus,
};

/// `sign(z) * max(|z| - t, 0)`. Rejects negative thresholds.
pub fn soft_threshold(z: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("soft-threshold level must be >= 0, got {t}")));
    }
    Ok(shrink(z, t))
}

/// Elementwise [`soft_threshold`] over a tensor.
pub fn soft_threshold_tensor(z: &Tensor, t: f64) -> Result<Tensor> {
    soft_threshold(0.0, t)?;
    Ok(z.map(|v| shrink(v as f64, t) as f32))
}

#[inline]
fn shrink(z: f64, t: f64) -> f64 {
    if t == 0.0 {
        // identity, including the sign of zero, so lambda = 0 is plain SGD
        z
    } else if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[inline]
fn sign(v: f32) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    ProxStep,
    OrthantStep,
}

/// Everything the sparse optimizer carries between steps.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub iterate: ParameterSet,
    pub step_size: f64,
    pub lambda: f64,
    mode: StepMode,
    /// Signs of the weights at orthant-phase entry; entries drop to 0 once
    /// the coordinate is projected to zero.
    sign_ref: Option<BTreeMap<String, Vec<i8>>>,
    pub step: usize,
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(iterate: ParameterSet, step_size: f64, lambda: f64) -> Result<Self> {
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {step_size}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self {
            iterate,
            step_size,
            lambda,
            mode: StepMode::ProxStep,
            sign_ref: None,
            step: 0,
            epoch: 0,
        })
    }

    pub fn mode(&self) -> StepMode {
        self.mode
    }

    pub fn set_step_size(&mut self, step_size: f64) -> Result<()> {
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {step_size}")));
        }
        self.step_size = step_size;
        Ok(())
    }

    pub fn enter_prox(&mut self) {
        self.mode = StepMode::ProxStep;
        self.sign_ref = None;
    }

    /// Switches to orthant steps and freezes the current weight signs.
    pub fn enter_orthant(&mut self) {
        self.mode = StepMode::OrthantStep;
        self.sign_ref = Some(
            self.iterate
                .weights()
                .map(|(k, t)| (k.clone(), t.data().iter().map(|&v| sign(v)).collect()))
                .collect(),
        );
    }

    pub fn sign_reference(&self, key: &str) -> Option<&[i8]> {
        self.sign_ref.as_ref()?.get(key).map(Vec::as_slice)
    }

    fn check_grads(&self, grads: &ParameterSet) -> Result<()> {
        for (key, w) in self.iterate.iter() {
            let g = grads
                .get(key)
                .ok_or_else(|| Error::Shape(format!("step {}: gradient for {key} is missing", self.step)))?;
            if !g.same_shape(w) {
                return Err(Error::Shape(format!(
                    "step {}: gradient for {key} has shape {:?}, parameter has {:?}",
                    self.step,
                    g.shape(),
                    w.shape()
                )));
            }
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("step {}, parameter {key}", self.step),
                    format!("non-finite gradient entry {bad}"),
                ));
            }
        }
        Ok(())
    }

    /// `w <- soft_threshold(w - eta*g, eta*lambda)` on weights; plain
    /// gradient step on biases.
    pub fn prox_sgd_step(&mut self, grads: &ParameterSet) -> Result<()> {
        if self.mode != StepMode::ProxStep {
            return Err(Error::InvalidArgument("prox step requested while in orthant mode".into()));
        }
        self.check_grads(grads)?;
        let eta = self.step_size;
        let t = eta * self.lambda;
        for (key, w) in self.iterate.iter_mut() {
            let g = grads.get(key).expect("checked");
            let level = if is_weight_key(key) { t } else { 0.0 };
            for (wi, &gi) in w.data_mut().iter_mut().zip(g.data()) {
                *wi = shrink(*wi as f64 - eta * gi as f64, level) as f32;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Orthant-face step: for weights with reference sign `s != 0`,
    /// `w <- w - eta*(g + lambda*s)`, zeroed if its sign no longer equals `s`;
    /// weights with `s == 0` (zero at entry or zeroed earlier in the phase)
    /// stay exactly zero. Biases take a plain step.
    pub fn orthant_step(&mut self, grads: &ParameterSet) -> Result<()> {
        if self.mode != StepMode::OrthantStep {
            return Err(Error::InvalidArgument("orthant step requested while in prox mode".into()));
        }
        self.check_grads(grads)?;
        let eta = self.step_size;
        let lambda = self.lambda;
        let refs = self.sign_ref.as_mut().expect("recorded at orthant entry");
        for (key, w) in self.iterate.iter_mut() {
            let g = grads.get(key).expect("checked");
            let Some(signs) = refs.get_mut(key) else {
                for (wi, &gi) in w.data_mut().iter_mut().zip(g.data()) {
                    *wi = (*wi as f64 - eta * gi as f64) as f32;
                }
                continue;
            };
            for ((wi, &gi), s) in w.data_mut().iter_mut().zip(g.data()).zip(signs.iter_mut()) {
                if *s == 0 {
                    *wi = 0.0;
                    continue;
                }
                let z = (*wi as f64 - eta * (gi as f64 + lambda * *s as f64)) as f32;
                if sign(z) == *s {
                    *wi = z;
                } else {
                    // projected onto the face; the coordinate stays zero for the rest of the phase
                    *wi = 0.0;
                    *s = 0;
                }
            }
            debug_assert!(
                w.data().iter().zip(signs.iter()).all(|(&v, &s)| sign(v) == 0 || sign(v) == s),
                "orthant step flipped a sign in {key}"
            );
        }
        self.step += 1;
        Ok(())
    }

    /// Dispatches on the current mode.
    pub fn step_with(&mut self, grads: &ParameterSet) -> Result<()> {
        match self.mode {
            StepMode::ProxStep => self.prox_sgd_step(grads),
            StepMode::OrthantStep => self.orthant_step(grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f32) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("x.weight", Tensor::scalar(w));
        p
    }

    fn value(s: &OptimizerState) -> f32 {
        s.iterate.get("x.weight").unwrap().data()[0]
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold(1.0, 0.3).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(-0.2, 0.3).unwrap(), 0.0);
        assert_eq!(soft_threshold(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5).unwrap(), -1.5);
        assert!(soft_threshold(1.0, -0.1).is_err());
        assert!(soft_threshold(1.0, f64::NAN).is_err());
    }

    #[test]
    fn prox_pure_shrinkage() {
        let mut s = OptimizerState::new(single(1.0), 0.1, 1.0).unwrap();
        s.prox_sgd_step(&single(0.0)).unwrap();
        assert!((value(&s) - 0.9).abs() < 1e-7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn prox_produces_exact_zero() {
        let mut s = OptimizerState::new(single(0.05), 0.1, 1.0).unwrap();
        s.prox_sgd_step(&single(0.0)).unwrap();
        assert_eq!(value(&s).to_bits(), 0.0f32.to_bits());
    }

    #[test]
    fn orthant_pseudo_gradient_shrink() {
        let mut s = OptimizerState::new(single(0.5), 0.1, 1.0).unwrap();
        s.enter_orthant();
        s.orthant_step(&single(0.0)).unwrap();
        assert!((value(&s) - 0.4).abs() < 1e-7);
    }

    #[test]
    fn orthant_projects_sign_flip_to_zero() {
        let mut s = OptimizerState::new(single(0.05), 0.1, 1.0).unwrap();
        s.enter_orthant();
        s.orthant_step(&single(0.0)).unwrap();
        assert_eq!(value(&s), 0.0);
    }

    #[test]
    fn orthant_keeps_zero_reference_frozen() {
        let mut s = OptimizerState::new(single(0.0), 0.1, 1.0).unwrap();
        s.enter_orthant();
        s.orthant_step(&single(-50.0)).unwrap();
        assert_eq!(value(&s), 0.0);
    }

    #[test]
    fn zeros_absorbing_within_orthant_phase() {
        let mut s = OptimizerState::new(single(0.05), 0.1, 1.0).unwrap();
        s.enter_orthant();
        s.orthant_step(&single(0.0)).unwrap();
        s.orthant_step(&single(-10.0)).unwrap();
        assert_eq!(value(&s), 0.0);
        // a new prox phase may revive it
        s.enter_prox();
        s.prox_sgd_step(&single(-10.0)).unwrap();
        assert!(value(&s) > 0.0);
    }

    #[test]
    fn biases_are_not_regularized() {
        let mut p = single(1.0);
        p.insert("x.bias", Tensor::scalar(0.05));
        let mut g = p.zeros_like();
        g.insert("x.bias", Tensor::scalar(0.0));
        let mut s = OptimizerState::new(p, 0.1, 1.0).unwrap();
        s.prox_sgd_step(&g).unwrap();
        assert_eq!(s.iterate.get("x.bias").unwrap().data()[0], 0.05);
    }

    #[test]
    fn non_finite_gradient_names_step() {
        let mut s = OptimizerState::new(single(1.0), 0.1, 1.0).unwrap();
        s.prox_sgd_step(&single(0.0)).unwrap();
        let err = s.prox_sgd_step(&single(f32::NAN)).unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("step 1"), "{err}");
    }

    #[test]
    fn wrong_mode_rejected() {
        let mut s = OptimizerState::new(single(1.0), 0.1, 1.0).unwrap();
        assert!(s.orthant_step(&single(0.0)).is_err());
        s.enter_orthant();
        assert!(s.prox_sgd_step(&single(0.0)).is_err());
    }

    #[test]
    fn invalid_state_rejected() {
        assert!(OptimizerState::new(single(1.0), 0.0, 1.0).is_err());
        assert!(OptimizerState::new(single(1.0), 0.1, -1.0).is_err());
    }
}
