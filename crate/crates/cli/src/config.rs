//! Run configuration: a TOML file, overridden by command-line flags, and
//! written back as a resolved snapshot next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use a2mt::learner::optim::LrSchedule;
use a2mt::learner::{ActionSelection, Mode, PretrainConfig, TrainConfig};
use a2mt::masking::MaskSpec;
use a2mt::synthgen::SyntheticConfig;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_NAME: &str = "config.toml";

/// Overrides the output directory when set.
pub const OUT_DIR_ENV: &str = "A2MT_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every generator in a run derives from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    pub threads: usize,
    pub deterministic: bool,
    pub task: SyntheticConfig,
    pub data: DataConfig,
    pub pretrain: PretrainSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            threads: 0,
            deterministic: true,
            task: SyntheticConfig::default(),
            data: DataConfig::default(),
            pretrain: PretrainSection::default(),
            train: desk_train_config(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Training defaults sized for a single CPU core.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        steps: 20_000,
        hidden: 64,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Existing dataset files; generated in memory from `task` when absent.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 50_000,
            n_test: 10_000,
            train: None,
            test: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Random,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub masks: MaskKind,
    pub mask: MaskSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub probe_size: usize,
    /// Pretrained parameters to start the actor-critic policy from.
    pub classifier: Option<PathBuf>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let base = PretrainConfig::default();
        Self {
            masks: MaskKind::Random,
            mask: MaskSpec::default(),
            steps: base.steps,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            schedule: base.schedule,
            weight_decay: base.weight_decay,
            grad_clip: base.grad_clip,
            hidden: 64,
            probe_size: base.probe_size,
            classifier: None,
        }
    }
}

impl PretrainSection {
    pub fn core(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            schedule: self.schedule,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            seed,
            probe_size: self.probe_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repeats: usize,
    pub selection: ActionSelection,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            selection: ActionSelection::Sample,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub costs: Vec<f64>,
    pub mode: Mode,
    pub steps: usize,
    pub conditioning: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            costs: vec![0.0, 5e-4, 5e-3, 5e-2],
            mode: Mode::A2c,
            steps: 3000,
            conditioning: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub coords: usize,
    pub probe: usize,
    pub hidden: usize,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords: 100,
            probe: 8,
            hidden: 16,
            tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the master seed into every section and checks the result.
    pub fn resolve(mut self) -> Result<Self> {
        if self.seed > i64::MAX as u64 {
            bail!("seed must be below 2^63");
        }
        self.task.seed = self.seed;
        self.train.seed = self.seed;
        self.train.deterministic = self.deterministic;
        self.task.validate()?;
        self.train.validate()?;
        self.pretrain.mask.validate()?;
        if self.train.costs.len() != a2mt::NUM_MODALITIES {
            bail!("train.costs needs one entry per modality ({})", a2mt::NUM_MODALITIES);
        }
        if self.eval.repeats == 0 {
            bail!("eval.repeats must be at least 1");
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved configuration into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(SNAPSHOT_NAME);
        fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
