//! Epoch loop for sparse training.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::nn::{ArchitectureDescriptor, ParameterSet};
use crate::optim::objective::{evaluate_with, layer_sparsity, NetworkObjective, Objective, ObjectiveReport};
use crate::optim::{OptimizerState, StepMode};

/// Abort when an epoch's mean loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Initial losses below this are raised to it before applying the factor,
/// so a near-perfect start does not flag ordinary noise as divergence.
pub const DIVERGENCE_FLOOR: f64 = 0.1;

/// Piecewise-constant step size: `base * decay^k` after the k-th milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub base: f64,
    /// Epoch indices (0-based) at which the decay is applied.
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl StepSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
            decay: 0.1,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.decay.powi(k as i32)
    }
}

/// Prox epochs followed by orthant epochs, repeated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSchedule {
    pub prox_epochs: usize,
    pub orthant_epochs: usize,
    pub repeats: usize,
}

impl SwitchSchedule {
    /// Splits `epochs` in two, prox first; odd budgets give prox the extra epoch.
    pub fn halves(epochs: usize) -> Self {
        Self {
            prox_epochs: epochs - epochs / 2,
            orthant_epochs: epochs / 2,
            repeats: 1,
        }
    }

    pub fn prox_only(epochs: usize) -> Self {
        Self {
            prox_epochs: epochs,
            orthant_epochs: 0,
            repeats: 1,
        }
    }

    pub fn total_epochs(&self) -> usize {
        (self.prox_epochs + self.orthant_epochs) * self.repeats
    }

    pub fn mode_at(&self, epoch: usize) -> StepMode {
        let cycle = self.prox_epochs + self.orthant_epochs;
        if cycle == 0 || epoch % cycle < self.prox_epochs {
            StepMode::ProxStep
        } else {
            StepMode::OrthantStep
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub schedule: StepSchedule,
    /// Seeds the per-epoch mini-batch shuffles.
    pub seed: u64,
    /// Keep a copy of the iterate with the best validation accuracy
    /// (the starting point counts as a candidate).
    pub keep_best: bool,
}

impl TrainConfig {
    pub fn new(batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            batch_size,
            schedule: StepSchedule::constant(learning_rate),
            seed,
            keep_best: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.schedule.base > 0.0) || !self.schedule.base.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.schedule.base
            )));
        }
        if !(self.schedule.decay > 0.0) {
            return Err(Error::InvalidArgument("learning-rate decay must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: StepMode,
    pub step_size: f64,
    /// `loss + lambda * l1` at the end of the epoch.
    pub objective: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    pub l1: f64,
    pub layer_sparsity: Vec<(String, f64)>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub records: Vec<EpochRecord>,
    pub initial_loss: f64,
    /// Full objective at the returned iterate.
    pub final_report: ObjectiveReport,
    pub validation_accuracy: Option<f64>,
    pub status: TrainStatus,
    /// `(epochs completed, accuracy, params)` of the best validation
    /// iterate, when tracking was requested.
    pub best: Option<(usize, f64, ParameterSet)>,
}

/// Mini-batch visiting order for one epoch. Depends only on `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs `schedule.total_epochs()` epochs of prox/orthant training on any
/// objective. Divergence is reported through [`TrainOutcome::status`] with
/// the last finite iterate. Non-finite values met mid-epoch count as
/// divergence too.
pub fn train_sparse(
    objective: &dyn Objective,
    init: ParameterSet,
    lambda: f64,
    switch: SwitchSchedule,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = objective.n_samples();
    if n == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut state = OptimizerState::new(init, config.schedule.at(0), lambda)?;
    let initial_loss = objective.full_loss(&state.iterate)?;
    let limit = DIVERGENCE_FACTOR * initial_loss.max(DIVERGENCE_FLOOR);
    let mut best = if config.keep_best {
        objective
            .validation_accuracy(&state.iterate)?
            .map(|acc| (0, acc, state.iterate.clone()))
    } else {
        None
    };
    let mut records = Vec::new();
    let mut status = TrainStatus::Completed;
    let mut mode = None;

    for epoch in 0..switch.total_epochs() {
        // with no penalty there is no support to identify: plain SGD throughout
        let want = if lambda == 0.0 { StepMode::ProxStep } else { switch.mode_at(epoch) };
        if mode != Some(want) {
            match want {
                StepMode::ProxStep => state.enter_prox(),
                StepMode::OrthantStep => state.enter_orthant(),
            }
            mode = Some(want);
        }
        state.set_step_size(config.schedule.at(epoch))?;
        state.epoch = epoch;

        let before = state.iterate.clone();
        let order = epoch_order(config.seed, epoch, n);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let step = objective
                .loss_grad(&state.iterate, batch)
                .and_then(|(loss, grads)| state.step_with(&grads).map(|_| loss));
            match step {
                Ok(loss) => loss_sum += loss * batch.len() as f64,
                // overflow inside the network counts as divergence
                Err(e) if e.is_numeric() => {
                    debug!("epoch {epoch}: {e}");
                    loss_sum = f64::INFINITY;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let loss = loss_sum / n as f64;
        if !loss.is_finite() || loss > limit {
            info!("epoch {epoch}: mean loss {loss:.6} exceeds {limit:.6}; stopping");
            state.iterate = before;
            status = TrainStatus::Diverged {
                epoch,
                loss,
                initial: initial_loss,
            };
            break;
        }
        let l1 = state.iterate.weight_l1();
        let val = objective.validation_accuracy(&state.iterate)?;
        let record = EpochRecord {
            epoch,
            phase: want,
            step_size: state.step_size,
            objective: loss + lambda * l1,
            loss,
            l1,
            layer_sparsity: layer_sparsity(&state.iterate),
            validation_accuracy: val,
        };
        debug!("{}", serde_json::to_string(&record)?);
        on_epoch(&record);
        records.push(record);
        if let (true, Some(acc)) = (config.keep_best, val) {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((epoch + 1, acc, state.iterate.clone()));
            }
        }
    }

    let final_report = evaluate_with(objective, &state.iterate, lambda)?;
    let validation_accuracy = objective.validation_accuracy(&state.iterate)?;
    Ok(TrainOutcome {
        params: state.iterate,
        records,
        initial_loss,
        final_report,
        validation_accuracy,
        status,
        best,
    })
}

/// Sparse training of a network on the dataset's training split, with
/// per-epoch validation accuracy. Divergence is an error.
pub fn sparse_train(
    arch: &ArchitectureDescriptor,
    init: ParameterSet,
    dataset: &DatasetHandle,
    lambda: f64,
    switch: SwitchSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    init.check_against(arch)?;
    let objective = NetworkObjective {
        arch,
        train: &dataset.train,
        validation: Some(&dataset.validation),
    };
    let outcome = train_sparse(&objective, init, lambda, switch, config, |_| {})?;
    match outcome.status {
        TrainStatus::Completed => Ok(outcome),
        TrainStatus::Diverged { epoch, loss, initial } => Err(Error::Diverged { epoch, loss, initial }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::objective::LogisticProblem;
    use crate::tensor::Tensor;

    /// `0.5 * (w - 1)^2`, one sample, for the lasso closed form.
    struct Quadratic;

    impl Objective for Quadratic {
        fn n_samples(&self) -> usize {
            1
        }
        fn loss_grad(&self, p: &ParameterSet, _: &[usize]) -> Result<(f64, ParameterSet)> {
            let w = p.get("q.weight").unwrap().data()[0] as f64;
            let mut g = ParameterSet::new();
            g.insert("q.weight", Tensor::scalar((w - 1.0) as f32));
            Ok((0.5 * (w - 1.0).powi(2), g))
        }
    }

    #[test]
    fn lasso_closed_form() {
        let mut init = ParameterSet::new();
        init.insert("q.weight", Tensor::scalar(0.0));
        let cfg = TrainConfig::new(1, 0.5, 0);
        let out = train_sparse(&Quadratic, init, 0.3, SwitchSchedule::prox_only(200), &cfg, |_| {}).unwrap();
        let w = out.params.get("q.weight").unwrap().data()[0];
        assert!((w - 0.7).abs() < 1e-6, "{w}");
    }

    #[test]
    fn zero_lambda_is_plain_sgd() {
        let (p, _) = LogisticProblem::synthetic(2, 60, 6, 2).unwrap();
        let cfg = TrainConfig::new(7, 0.2, 11);
        let out = train_sparse(&p, p.zero_params(), 0.0, SwitchSchedule::halves(6), &cfg, |_| {}).unwrap();

        let mut w = vec![0.0f32; 6];
        for epoch in 0..6 {
            for batch in epoch_order(11, epoch, 60).chunks(7) {
                let wd: Vec<f64> = w.iter().map(|&v| v as f64).collect();
                let (_, g) = p.loss_grad_f64(&wd, batch);
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi = (*wi as f64 - 0.2 * (gi as f32) as f64) as f32;
                }
            }
        }
        let got = out.params.get(super::super::objective::LOGISTIC_KEY).unwrap().data();
        assert!(got.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn orthant_phase_keeps_signs() {
        let (p, _) = LogisticProblem::synthetic(3, 100, 10, 3).unwrap();
        let cfg = TrainConfig::new(10, 0.1, 1);
        let mut seen = Vec::new();
        let out = train_sparse(&p, p.zero_params(), 0.02, SwitchSchedule::halves(20), &cfg, |r| seen.push(r.phase)).unwrap();
        assert_eq!(seen.iter().filter(|m| **m == StepMode::OrthantStep).count(), 10);
        assert_eq!(seen[0], StepMode::ProxStep);
        assert_eq!(out.status, TrainStatus::Completed);
    }

    #[test]
    fn divergence_detected() {
        let (p, _) = LogisticProblem::synthetic(4, 50, 5, 2).unwrap();
        let cfg = TrainConfig::new(50, 1e4, 0);
        let out = train_sparse(&p, p.zero_params(), 0.0, SwitchSchedule::prox_only(5), &cfg, |_| {}).unwrap();
        assert!(matches!(out.status, TrainStatus::Diverged { .. }), "{:?}", out.status);
    }

    #[test]
    fn schedules() {
        let s = StepSchedule {
            base: 1.0,
            milestones: vec![2, 4],
            decay: 0.1,
        };
        assert_eq!(s.at(1), 1.0);
        assert!((s.at(2) - 0.1).abs() < 1e-15);
        assert!((s.at(5) - 0.01).abs() < 1e-15);
        let h = SwitchSchedule::halves(5);
        assert_eq!((h.prox_epochs, h.orthant_epochs), (3, 2));
        assert_eq!(h.mode_at(2), StepMode::ProxStep);
        assert_eq!(h.mode_at(3), StepMode::OrthantStep);
    }
}
