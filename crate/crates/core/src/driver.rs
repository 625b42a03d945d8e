//! The alternating explore / compress / rescale loop and final fine-tuning.

use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::compress::{compress, count_flops, count_params, CompressionConfig};
use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::nn::{ArchitectureDescriptor, ParameterSet};
use crate::optim::objective::{split_accuracy, NetworkObjective};
use crate::optim::train::{sparse_train, train_sparse, TrainOutcome, TrainStatus};
use crate::optim::{SwitchSchedule, TrainConfig};

/// `lambda_t * size_new / size_old`.
pub fn lambda_update(lambda_t: f64, size_new: u64, size_old: u64) -> Result<f64> {
    if size_new == 0 || size_old == 0 {
        return Err(Error::InvalidArgument(format!(
            "model sizes must be positive, got {size_new} and {size_old}"
        )));
    }
    Ok(lambda_t * (size_new as f64 / size_old as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    /// Relative change of the model size below which the size has flattened.
    pub size_threshold: f64,
    /// Relative change of the overall sparsity below which it has flattened.
    pub sparsity_threshold: f64,
    /// Number of rounds the flattening is measured over.
    pub window: usize,
    /// Absolute validation-accuracy drop below the best seen that stops the loop.
    pub acc_regression_threshold: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            size_threshold: 0.01,
            sparsity_threshold: 0.01,
            window: 1,
            acc_regression_threshold: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RSPConfig {
    pub lambda0: f64,
    pub max_rounds: usize,
    /// Exploration budget per round, split between prox and orthant phases.
    pub switch: SwitchSchedule,
    pub explore: TrainConfig,
    pub finetune_epochs: usize,
    pub finetune: TrainConfig,
    pub convergence: ConvergenceConfig,
    pub compression: CompressionConfig,
    /// Re-initialize the final architecture instead of keeping survivors.
    pub retrain_from_scratch: bool,
    /// Seed for re-initialization when retraining from scratch.
    pub init_seed: u64,
}

impl RSPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda0 must be positive, got {}", self.lambda0)));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max_rounds must be >= 1".into()));
        }
        let c = &self.convergence;
        if [c.size_threshold, c.sparsity_threshold, c.acc_regression_threshold]
            .iter()
            .any(|t| !(*t >= 0.0))
        {
            return Err(Error::InvalidArgument("convergence thresholds must be >= 0".into()));
        }
        if c.window == 0 {
            return Err(Error::InvalidArgument("convergence window must be >= 1".into()));
        }
        self.compression.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    /// Exploration diverged; the round produced no new model.
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

/// Metrics of one explore/compress round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub lambda: f64,
    /// Per-block sparsity after exploration.
    pub profile: Vec<f64>,
    /// Zero fraction over all kernel weights after exploration.
    pub sparsity: f64,
    pub size_before: u64,
    pub size_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub widths_before: Vec<usize>,
    pub widths_after: Vec<usize>,
    /// Validation accuracy of the explored (sparse, unpruned) model.
    pub validation_accuracy: Option<f64>,
    /// Validation accuracy of the pruned model with survivor weights.
    pub pruned_validation_accuracy: Option<f64>,
    pub wall_time_secs: f64,
    #[serde(flatten)]
    pub status: RoundStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionHistory {
    pub baseline_size: u64,
    pub baseline_flops: u64,
    pub baseline_validation_accuracy: Option<f64>,
    pub records: Vec<RoundRecord>,
    /// Index into `records` of the selected model; `None` keeps the baseline.
    pub best: Option<usize>,
}

impl CompressionHistory {
    pub fn new(baseline_size: u64, baseline_flops: u64, baseline_validation_accuracy: Option<f64>) -> Self {
        Self {
            baseline_size,
            baseline_flops,
            baseline_validation_accuracy,
            records: Vec::new(),
            best: None,
        }
    }

    /// Best record: highest validation accuracy among completed rounds that
    /// shrank the model below the baseline (all completed rounds if none
    /// did); ties go to the smaller model, then the earlier round.
    pub fn select_best(&self) -> Option<usize> {
        let done: Vec<usize> = (0..self.records.len())
            .filter(|&i| self.records[i].status == RoundStatus::Completed)
            .collect();
        let smaller: Vec<usize> = done
            .iter()
            .copied()
            .filter(|&i| self.records[i].size_after < self.baseline_size)
            .collect();
        let pool = if smaller.is_empty() { done } else { smaller };
        pool.into_iter().reduce(|a, b| {
            let acc = |i: usize| self.records[i].validation_accuracy.unwrap_or(f64::NEG_INFINITY);
            let (ra, rb) = (&self.records[a], &self.records[b]);
            if acc(b) > acc(a) || (acc(b) == acc(a) && rb.size_after < ra.size_after)
            {
                b
            } else {
                a
            }
        })
    }

    /// Copy with wall-clock times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut h = self.clone();
        h.records.iter_mut().for_each(|r| r.wall_time_secs = 0.0);
        h
    }
}

fn relative_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (new - old).abs() / old.abs()
    }
}

/// Why the loop stops, if it does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Flattened,
    AccuracyRegressed,
    MaxRounds,
    Diverged,
}

/// Like [`check_convergence`] but names the clause that fired.
pub fn convergence_reason(history: &CompressionHistory, config: &RSPConfig) -> Option<StopReason> {
    let records = &history.records;
    let last = records.last()?;
    if matches!(last.status, RoundStatus::Diverged { .. }) {
        return Some(StopReason::Diverged);
    }
    let c = &config.convergence;
    if records.len() > c.window {
        let prev = &records[records.len() - 1 - c.window];
        let size = relative_change(last.size_after as f64, prev.size_after as f64);
        let sparsity = relative_change(last.sparsity, prev.sparsity);
        if size < c.size_threshold && sparsity < c.sparsity_threshold {
            return Some(StopReason::Flattened);
        }
    }
    if let Some(acc) = last.validation_accuracy {
        let best_seen = records
            .iter()
            .filter_map(|r| r.validation_accuracy)
            .chain(history.baseline_validation_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_seen - acc > c.acc_regression_threshold {
            return Some(StopReason::AccuracyRegressed);
        }
    }
    if records.len() >= config.max_rounds {
        return Some(StopReason::MaxRounds);
    }
    None
}

/// True when the model has flattened, accuracy regressed past the
/// threshold, or the round budget is spent.
pub fn check_convergence(history: &CompressionHistory, config: &RSPConfig) -> bool {
    convergence_reason(history, config).is_some()
}

#[derive(Clone, Debug)]
pub struct FineTuneOutcome {
    pub params: ParameterSet,
    /// Epochs completed at the returned iterate.
    pub best_epoch: usize,
    pub validation_accuracy: Option<f64>,
    pub diverged: bool,
}

/// Plain SGD (`lambda = 0`) on a fixed architecture, returning the iterate
/// with the best validation accuracy (the starting point included).
pub fn fine_tune(
    arch: &ArchitectureDescriptor,
    params: ParameterSet,
    dataset: &DatasetHandle,
    epochs: usize,
    config: &TrainConfig,
) -> Result<FineTuneOutcome> {
    params.check_against(arch)?;
    if epochs == 0 {
        return Ok(FineTuneOutcome {
            params,
            best_epoch: 0,
            validation_accuracy: None,
            diverged: false,
        });
    }
    let objective = NetworkObjective {
        arch,
        train: &dataset.train,
        validation: (!dataset.validation.is_empty()).then_some(&dataset.validation),
    };
    let cfg = TrainConfig {
        keep_best: true,
        ..config.clone()
    };
    let out = train_sparse(&objective, params, 0.0, SwitchSchedule::prox_only(epochs), &cfg, |r| {
        info!(
            "fine-tune epoch {}: loss {:.5}, validation accuracy {:?}",
            r.epoch, r.loss, r.validation_accuracy
        )
    })?;
    let diverged = matches!(out.status, TrainStatus::Diverged { .. });
    if diverged {
        warn!("fine-tuning diverged; returning the best epoch seen");
    }
    Ok(match out.best {
        Some((epoch, acc, params)) => FineTuneOutcome {
            params,
            best_epoch: epoch,
            validation_accuracy: Some(acc),
            diverged,
        },
        None => FineTuneOutcome {
            best_epoch: out.records.len(),
            params: out.params,
            validation_accuracy: out.validation_accuracy,
            diverged,
        },
    })
}

#[derive(Clone, Debug)]
pub struct RspOutcome {
    pub arch: ArchitectureDescriptor,
    pub params: ParameterSet,
    pub history: CompressionHistory,
    pub stop: Option<StopReason>,
    /// Architecture and weights of the selected checkpoint before fine-tuning.
    pub selected_arch: ArchitectureDescriptor,
    pub finetune: FineTuneOutcome,
}

fn validation_accuracy(
    arch: &ArchitectureDescriptor,
    params: &ParameterSet,
    dataset: &DatasetHandle,
) -> Result<Option<f64>> {
    (!dataset.validation.is_empty())
        .then(|| split_accuracy(arch, params, &dataset.validation))
        .transpose()
}

/// Dense training (`lambda = 0`) of a freshly initialized network.
pub fn train_baseline(
    arch: &ArchitectureDescriptor,
    dataset: &DatasetHandle,
    init_seed: u64,
    epochs: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = ParameterSet::init(arch, init_seed)?;
    sparse_train(arch, init, dataset, 0.0, SwitchSchedule::prox_only(epochs), config)
}

/// Runs rounds of exploration and compression from a trained baseline
/// until convergence, then fine-tunes the selected model.
pub fn rsp_run(
    config: &RSPConfig,
    arch0: &ArchitectureDescriptor,
    baseline: &ParameterSet,
    dataset: &DatasetHandle,
) -> Result<RspOutcome> {
    config.validate()?;
    arch0.validate()?;
    baseline.check_against(arch0)?;
    let base_acc = validation_accuracy(arch0, baseline, dataset)?;
    let mut history = CompressionHistory::new(count_params(arch0)?, count_flops(arch0)?, base_acc);
    let mut snapshots: Vec<(ArchitectureDescriptor, ParameterSet)> = Vec::new();

    let mut arch = arch0.clone();
    let mut params = baseline.clone();
    let mut lambda = config.lambda0;
    let mut stop = None;
    for round in 0.. {
        let started = Instant::now();
        let size_before = count_params(&arch)?;
        let flops_before = count_flops(&arch)?;
        let objective = NetworkObjective {
            arch: &arch,
            train: &dataset.train,
            validation: None,
        };
        let explored = train_sparse(&objective, params.clone(), lambda, config.switch, &config.explore, |r| {
            info!(
                "round {round} epoch {} ({:?}): F {:.5}, f {:.5}, sparsity {:.4}",
                r.epoch,
                r.phase,
                r.objective,
                r.loss,
                r.layer_sparsity.iter().map(|(_, s)| s).sum::<f64>() / r.layer_sparsity.len().max(1) as f64
            )
        })?;
        if let TrainStatus::Diverged { epoch, loss, initial } = explored.status {
            warn!("round {round}: exploration diverged; keeping the best earlier checkpoint");
            history.records.push(RoundRecord {
                round,
                lambda,
                profile: Vec::new(),
                sparsity: explored.params.overall_sparsity(),
                size_before,
                size_after: size_before,
                flops_before,
                flops_after: flops_before,
                widths_before: arch.widths(),
                widths_after: arch.widths(),
                validation_accuracy: None,
                pruned_validation_accuracy: None,
                wall_time_secs: started.elapsed().as_secs_f64(),
                status: RoundStatus::Diverged { epoch, loss, initial },
            });
            snapshots.push((arch.clone(), params.clone()));
            stop = Some(StopReason::Diverged);
            break;
        }
        let val = validation_accuracy(&arch, &explored.params, dataset)?;
        let comp = compress(&arch, &explored.params, &config.compression)?;
        let size_after = count_params(&comp.arch)?;
        let record = RoundRecord {
            round,
            lambda,
            profile: comp.profile.blocks.clone(),
            sparsity: explored.params.overall_sparsity(),
            size_before,
            size_after,
            flops_before,
            flops_after: count_flops(&comp.arch)?,
            widths_before: arch.widths(),
            widths_after: comp.arch.widths(),
            validation_accuracy: val,
            pruned_validation_accuracy: validation_accuracy(&comp.arch, &comp.params, dataset)?,
            wall_time_secs: started.elapsed().as_secs_f64(),
            status: RoundStatus::Completed,
        };
        info!(
            "round {round}: widths {} -> {}, params {size_before} -> {size_after}, validation accuracy {val:?}",
            arch.widths_string(),
            comp.arch.widths_string()
        );
        history.records.push(record);
        lambda = lambda_update(lambda, size_after, size_before)?;
        arch = comp.arch.clone();
        params = comp.params.clone();
        snapshots.push((comp.arch, comp.params));
        stop = convergence_reason(&history, config);
        if stop.is_some() {
            break;
        }
    }

    history.best = history.select_best();
    let (selected_arch, selected_params) = match history.best {
        Some(i) => snapshots.swap_remove(i),
        None => (arch0.clone(), baseline.clone()),
    };
    let start_params = if config.retrain_from_scratch {
        ParameterSet::init(&selected_arch, config.init_seed)?
    } else {
        selected_params
    };
    let finetune = fine_tune(&selected_arch, start_params, dataset, config.finetune_epochs, &config.finetune)?;
    Ok(RspOutcome {
        arch: selected_arch.clone(),
        params: finetune.params.clone(),
        history,
        stop,
        selected_arch,
        finetune,
    })
}

/// One grid point of the lambda search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrial {
    pub lambda: f64,
    pub validation_accuracy: f64,
    pub sparsity: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub baseline_accuracy: f64,
    pub tolerance: f64,
    pub trials: Vec<LambdaTrial>,
    pub selected: f64,
}

/// Powers of ten from 1e-2 down to 1e-5.
pub const LAMBDA_GRID: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
/// Allowed validation-accuracy loss of the selected lambda.
pub const LAMBDA_TOLERANCE: f64 = 0.005;

/// Explores from the baseline at each grid value and picks the largest
/// lambda whose explored model stays within `tolerance` of the baseline
/// validation accuracy (the smallest lambda when none does).
pub fn select_lambda(
    arch: &ArchitectureDescriptor,
    baseline: &ParameterSet,
    dataset: &DatasetHandle,
    grid: &[f64],
    switch: SwitchSchedule,
    explore: &TrainConfig,
    tolerance: f64,
) -> Result<LambdaSearch> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidArgument("lambda grid must be non-empty and positive".into()));
    }
    if dataset.validation.is_empty() {
        return Err(Error::InvalidArgument("lambda search needs a validation split".into()));
    }
    let baseline_accuracy = split_accuracy(arch, baseline, &dataset.validation)?;
    let objective = NetworkObjective {
        arch,
        train: &dataset.train,
        validation: None,
    };
    let mut trials = Vec::new();
    for &lambda in grid {
        let out = train_sparse(&objective, baseline.clone(), lambda, switch, explore, |_| {})?;
        let diverged = matches!(out.status, TrainStatus::Diverged { .. });
        let acc = if diverged {
            f64::NAN
        } else {
            split_accuracy(arch, &out.params, &dataset.validation)?
        };
        info!("lambda {lambda:e}: validation accuracy {acc:.4}, sparsity {:.4}", out.params.overall_sparsity());
        trials.push(LambdaTrial {
            lambda,
            validation_accuracy: acc,
            sparsity: out.params.overall_sparsity(),
            diverged,
        });
    }
    let selected = trials
        .iter()
        .filter(|t| !t.diverged && t.validation_accuracy >= baseline_accuracy - tolerance)
        .map(|t| t.lambda)
        .fold(None, |m: Option<f64>, l| Some(m.map_or(l, |m| m.max(l))))
        .unwrap_or_else(|| grid.iter().copied().fold(f64::INFINITY, f64::min));
    Ok(LambdaSearch {
        baseline_accuracy,
        tolerance,
        trials,
        selected,
    })
}
