//! Experiment configuration: a TOML file, then command-line overrides on
//! top, validated as a whole before anything runs.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use rsp_core::compress::{CompressionConfig, UnitMode};
use rsp_core::driver::{ConvergenceConfig, RSPConfig, LAMBDA_GRID};
use rsp_core::nn::{ArchitectureDescriptor, Preset};
use rsp_core::optim::{StepSchedule, SwitchSchedule, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Table,
    Csv,
    JsonLines,
}

/// A preset name or a full inline descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(Preset),
    Inline(ArchitectureDescriptor),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub samples: usize,
    pub informative_channels: usize,
    pub noise_channels: usize,
    pub classes: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            samples: 2000,
            informative_channels: 2,
            noise_channels: 2,
            classes: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Baseline training epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs at which the step size is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.05,
            milestones: Vec::new(),
            decay: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RspSection {
    pub lambda0: f64,
    /// Pick `lambda0` by searching `grid` instead of using it directly.
    pub lambda_grid: bool,
    pub grid: Vec<f64>,
    pub lambda_tolerance: f64,
    pub rounds: usize,
    /// Exploration epochs per round; defaults to `train.epochs`.
    pub explore_epochs: Option<usize>,
    pub finetune_epochs: usize,
    pub epsilon: f64,
    pub unit_mode: UnitModeName,
    pub shrink_linear_layers: bool,
    /// Re-initialize the pruned network instead of keeping survivor weights.
    pub reinitialize: bool,
    pub convergence: ConvergenceConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitModeName {
    PerLayer,
    PerResidualBlock,
}

impl Default for RspSection {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_grid: false,
            grid: LAMBDA_GRID.to_vec(),
            lambda_tolerance: rsp_core::driver::LAMBDA_TOLERANCE,
            rounds: 1,
            explore_epochs: None,
            finetune_epochs: 3,
            epsilon: 0.1,
            unit_mode: UnitModeName::PerLayer,
            shrink_linear_layers: true,
            reinitialize: false,
            convergence: ConvergenceConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Directory holding the MNIST IDX or CIFAR-10 binary files.
    pub data_dir: Option<PathBuf>,
    pub arch: ArchChoice,
    pub seed: u64,
    /// Seeds for data generation and the validation split, weight
    /// initialization, and mini-batch order; each defaults to `seed`.
    pub data_seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub out: PathBuf,
    pub format: Format,
    /// Baseline checkpoint for `compress`; defaults to `<out>/baseline.rspc`.
    pub baseline: Option<PathBuf>,
    /// Train the baseline inside `compress` instead of loading it.
    pub from_scratch: bool,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub rsp: RspSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synth,
            data_dir: None,
            arch: ArchChoice::Preset(Preset::LenetSmall),
            seed: 0,
            data_seed: None,
            init_seed: None,
            train_seed: None,
            out: PathBuf::from("runs/latest"),
            format: Format::Table,
            baseline: None,
            from_scratch: false,
            synth: SynthSection::default(),
            train: TrainSection::default(),
            rsp: RspSection::default(),
        }
    }
}

/// Seeds actually used by a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| field("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            data: self.data_seed.unwrap_or(self.seed),
            init: self.init_seed.unwrap_or(self.seed),
            train: self.train_seed.unwrap_or(self.seed),
        }
    }

    /// Input shape and class count implied by the dataset choice.
    pub fn data_geometry(&self) -> ([usize; 3], usize) {
        match self.dataset {
            DatasetKind::Mnist => ([1, 28, 28], 10),
            DatasetKind::Cifar10 => ([3, 32, 32], 10),
            DatasetKind::Synth => (
                [self.synth.informative_channels + self.synth.noise_channels, 16, 16],
                self.synth.classes,
            ),
        }
    }

    pub fn architecture(&self) -> Result<ArchitectureDescriptor, CliError> {
        let (shape, classes) = self.data_geometry();
        let arch = match &self.arch {
            ArchChoice::Preset(p) => p.build(shape, classes).map_err(|e| field("arch", e))?,
            ArchChoice::Inline(a) => a.clone(),
        };
        arch.validate().map_err(|e| field("arch", e))?;
        if arch.input_shape != shape {
            return Err(field(
                "arch",
                format!("input shape {:?} does not match {:?} samples {shape:?}", arch.input_shape, self.dataset),
            ));
        }
        let out = arch.class_count().map_err(|e| field("arch", e))?;
        if out != classes {
            return Err(field("arch", format!("{out} outputs for {classes} classes")));
        }
        Ok(arch)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            schedule: StepSchedule {
                base: self.train.learning_rate,
                milestones: self.train.milestones.clone(),
                decay: self.train.decay,
            },
            seed: self.seeds().train,
            keep_best: false,
        }
    }

    pub fn compression(&self) -> CompressionConfig {
        CompressionConfig {
            epsilon: self.rsp.epsilon,
            unit_mode: match self.rsp.unit_mode {
                UnitModeName::PerLayer => UnitMode::PerLayer,
                UnitModeName::PerResidualBlock => UnitMode::PerResidualBlock,
            },
            shrink_linear_layers: self.rsp.shrink_linear_layers,
        }
    }

    pub fn explore_switch(&self) -> SwitchSchedule {
        SwitchSchedule::halves(self.rsp.explore_epochs.unwrap_or(self.train.epochs))
    }

    pub fn rsp_config(&self, lambda0: f64) -> RSPConfig {
        let train = self.train_config();
        RSPConfig {
            lambda0,
            max_rounds: self.rsp.rounds,
            switch: self.explore_switch(),
            explore: train.clone(),
            finetune_epochs: self.rsp.finetune_epochs,
            finetune: train,
            convergence: self.rsp.convergence.clone(),
            compression: self.compression(),
            retrain_from_scratch: self.rsp.reinitialize,
            init_seed: self.seeds().init,
        }
    }

    /// Checks every field that can be checked without touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        if matches!(self.dataset, DatasetKind::Mnist | DatasetKind::Cifar10) && self.data_dir.is_none() {
            return Err(field("data_dir", format!("required for dataset {:?} (use --data-dir)", self.dataset)));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(field("train.batch_size", "must be >= 1"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(field("train.learning_rate", format!("must be positive, got {}", t.learning_rate)));
        }
        if !(t.decay > 0.0 && t.decay.is_finite()) {
            return Err(field("train.decay", format!("must be positive, got {}", t.decay)));
        }
        if self.dataset == DatasetKind::Synth {
            let s = &self.synth;
            if s.samples < 10 {
                return Err(field("synth.samples", "need at least 10 samples"));
            }
            if s.informative_channels == 0 {
                return Err(field("synth.informative_channels", "must be >= 1"));
            }
            if s.classes < 2 || s.classes > 9 * s.informative_channels {
                return Err(field(
                    "synth.classes",
                    format!("must be in [2, {}] for {} informative channels", 9 * s.informative_channels, s.informative_channels),
                ));
            }
        }
        let r = &self.rsp;
        if !(r.epsilon > 0.0 && r.epsilon <= 1.0) {
            return Err(field("rsp.epsilon", format!("must be in (0, 1], got {}", r.epsilon)));
        }
        if r.lambda_grid {
            if r.grid.is_empty() || r.grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return Err(field("rsp.grid", "must be a non-empty list of positive values"));
            }
        } else if !(r.lambda0 > 0.0 && r.lambda0.is_finite()) {
            return Err(field("rsp.lambda0", format!("must be positive, got {}", r.lambda0)));
        }
        if !(r.lambda_tolerance >= 0.0) {
            return Err(field("rsp.lambda_tolerance", "must be >= 0"));
        }
        if r.rounds == 0 {
            return Err(field("rsp.rounds", "must be >= 1"));
        }
        if r.explore_epochs == Some(0) {
            return Err(field("rsp.explore_epochs", "must be >= 1"));
        }
        self.rsp_config(r.lambda0.max(f64::MIN_POSITIVE))
            .validate()
            .map_err(|e| field("rsp", e))?;
        self.architecture()?;
        Ok(())
    }

    /// FNV-1a of the resolved configuration, hex. Where the run is written
    /// and how it is printed do not change the experiment, so `out` and
    /// `format` are left out.
    pub fn hash(&self) -> String {
        let identity = Self {
            out: PathBuf::new(),
            format: Format::Table,
            ..self.clone()
        };
        format!("{:016x}", rsp_core::util::fnv1a(identity.to_toml().as_bytes()))
    }
}
