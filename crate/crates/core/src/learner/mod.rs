//! Trainable classifier and acquisition policy.
//!
//! Two training modes share the same networks:
//!
//! - [`Mode::GumbelJoint`]: policy and classifier are trained together by
//!   back-propagating the episode objective through straight-through Gumbel
//!   actions ([`gumbel`]).
//! - [`Mode::A2c`]: the classifier is pretrained on randomly masked inputs
//!   ([`pretrain`]) and frozen; the policy is then trained by advantage
//!   actor-critic with a learned baseline ([`a2c`]).

pub mod a2c;
pub mod agent;
pub mod checkpoint;
pub mod gradcheck;
pub mod gumbel;
pub mod model;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod tape;

use serde::{Deserialize, Serialize};

use self::a2c::{a2c_gradients, rollout, A2cOptions, RewardOptions};
use self::gumbel::{build_surrogate, GumbelNoise, SurrogateOptions};
use self::model::{Architecture, ModelParams};
use self::optim::{clip_global_norm, learning_rate, Adam, LrSchedule};
use crate::env::CostSchedule;
use crate::rng::{derive_seed_tagged, SplitMix64};
use crate::synthgen::LabeledSequence;
use crate::{Error, Result};

pub use self::agent::{ActionSelection, LearnedPolicy};
pub use self::pretrain::{pretrain_classifier, MaskSource, PretrainConfig, PretrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    GumbelJoint,
    A2c,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub intermediate: bool,
    pub alpha: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    /// Feed the classifier's prediction and entropy to the policy.
    pub conditioning: bool,
    pub costs: Vec<f64>,
    pub seed: u64,
    /// Fixed-order reductions. Every reduction in this crate already runs in
    /// a fixed order, so the flag is recorded rather than acted on.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::GumbelJoint,
            steps: 50_000,
            batch_size: 256,
            learning_rate: 3e-4,
            schedule: LrSchedule::Cosine,
            weight_decay: 1e-6,
            tau: 1.0,
            intermediate: false,
            alpha: 0.1,
            gamma: 1.0,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: 10.0,
            hidden: 128,
            conditioning: false,
            costs: vec![0.0005, 0.0005],
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive (got {})", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1] (got {})", self.gamma)));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size and hidden must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("learning_rate and grad_clip must be positive".into()));
        }
        CostSchedule::new(self.costs.clone())?;
        Ok(())
    }

    pub fn cost_schedule(&self) -> Result<CostSchedule> {
        CostSchedule::new(self.costs.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Mean episode reward `-C(a) - L (+ I)` over the batch.
    pub reward: f64,
    pub cost: f64,
    pub loss: f64,
    pub rates: Vec<f64>,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// Parameters, optimiser state and generator of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub opt_classifier: Adam,
    pub opt_policy: Adam,
    pub opt_baseline: Adam,
    pub rng: SplitMix64,
    pub step: usize,
}

impl Trainer {
    /// Fresh parameters for `arch`, initialised from the config seed.
    pub fn new(arch: Architecture, config: TrainConfig) -> Result<Self> {
        let mut init = SplitMix64::new(derive_seed_tagged(config.seed, "init", 0));
        let params = ModelParams::new(arch, &mut init);
        Self::from_params(params, config)
    }

    /// Continues from existing parameters (e.g. a pretrained classifier).
    /// The architecture of `params` overrides `config.hidden` and
    /// `config.conditioning`.
    pub fn from_params(params: ModelParams, mut config: TrainConfig) -> Result<Self> {
        config.hidden = params.arch.hidden;
        config.conditioning = params.arch.conditioning;
        config.validate()?;
        if config.costs.len() != params.arch.modalities() {
            return Err(Error::Config(format!(
                "{} costs given for {} modalities",
                config.costs.len(),
                params.arch.modalities()
            )));
        }
        let wd = config.weight_decay;
        Ok(Self {
            opt_classifier: Adam::new(params.classifier.len(), wd),
            opt_policy: Adam::new(params.policy.len(), wd),
            opt_baseline: Adam::new(params.baseline.len(), wd),
            rng: SplitMix64::new(derive_seed_tagged(config.seed, "train", 0)),
            step: 0,
            params,
            config,
        })
    }

    fn sample_batch<'a>(&mut self, data: &'a [LabeledSequence]) -> Result<Vec<&'a LabeledSequence>> {
        if data.is_empty() {
            return Err(Error::Input("empty training set".into()));
        }
        Ok((0..self.config.batch_size)
            .map(|_| &data[self.rng.below(data.len() as u64) as usize])
            .collect())
    }

    fn current_lr(&self) -> f64 {
        learning_rate(self.config.schedule, self.config.learning_rate, self.step, self.config.steps)
    }

    /// One optimisation step in the configured mode.
    pub fn train_step(&mut self, data: &[LabeledSequence]) -> Result<StepStats> {
        match self.config.mode {
            Mode::GumbelJoint => self.gumbel_train_step(data),
            Mode::A2c => self.a2c_train_step(data),
        }
    }

    /// Joint straight-through Gumbel step: descends `C(a) + L` in the policy
    /// and `L` in the classifier.
    pub fn gumbel_train_step(&mut self, data: &[LabeledSequence]) -> Result<StepStats> {
        let batch = self.sample_batch(data)?;
        let arch = &self.params.arch;
        let noise = GumbelNoise::sample(arch.horizon, batch.len(), arch.modalities(), &mut self.rng);
        let costs = self.config.cost_schedule()?;
        let s = build_surrogate(
            &self.params,
            &batch,
            &costs,
            &noise,
            SurrogateOptions {
                tau: self.config.tau,
                straight_through: true,
            },
        )?;
        let grads = s.tape.backward(s.objective);
        let mut g_classifier = self.params.classifier.gradient(&s.classifier, &grads);
        let mut g_policy = self.params.policy.gradient(&s.policy, &grads);
        let norm = clip_global_norm(&mut [&mut g_classifier, &mut g_policy], self.config.grad_clip);
        if !norm.is_finite() {
            return Err(Error::Training {
                step: self.step,
                detail: format!(
                    "non-finite gradient norm (loss {}, cost {})",
                    s.mean_loss, s.mean_cost
                ),
            });
        }
        let lr = self.current_lr();
        self.opt_classifier.step(&mut self.params.classifier.data, &g_classifier, lr);
        self.opt_policy.step(&mut self.params.policy.data, &g_policy, lr);
        let rows = batch.len() as f64;
        let horizon = arch_horizon(&self.params);
        let modalities = self.params.arch.modalities();
        let rates = (0..modalities)
            .map(|m| s.actions.iter().map(|a| a.column(m).sum()).sum::<f64>() / (rows * horizon))
            .collect();
        let stats = StepStats {
            step: self.step,
            reward: -(s.mean_cost + s.mean_loss),
            cost: s.mean_cost,
            loss: s.mean_loss,
            rates,
            grad_norm: norm,
            learning_rate: lr,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Actor-critic step with the classifier held fixed.
    pub fn a2c_train_step(&mut self, data: &[LabeledSequence]) -> Result<StepStats> {
        let batch = self.sample_batch(data)?;
        let costs = self.config.cost_schedule()?;
        let cfg = self.config.clone();
        let rng = &mut self.rng;
        let ro = rollout(
            &self.params,
            &batch,
            &costs,
            RewardOptions {
                intermediate: cfg.intermediate,
                alpha: cfg.alpha,
                gamma: cfg.gamma,
            },
            |_, _, probs| probs.iter().map(|&p| rng.bernoulli(p)).collect(),
        )?;
        let g = a2c_gradients(
            &self.params,
            &ro,
            A2cOptions {
                gamma: cfg.gamma,
                entropy_coef: cfg.entropy_coef,
                value_coef: cfg.value_coef,
                use_baseline: true,
            },
        )?;
        let (mut g_policy, mut g_baseline) = (g.policy, g.baseline);
        let norm = clip_global_norm(&mut [&mut g_policy, &mut g_baseline], cfg.grad_clip);
        if !norm.is_finite() || !g.loss.is_finite() {
            return Err(Error::Training {
                step: self.step,
                detail: format!("non-finite actor-critic loss {} / gradient norm {norm}", g.loss),
            });
        }
        let lr = self.current_lr();
        self.opt_policy.step(&mut self.params.policy.data, &g_policy, lr);
        self.opt_baseline.step(&mut self.params.baseline.data, &g_baseline, lr);

        let n = ro.episodes as f64;
        let horizon = ro.horizon as f64;
        let reward = ro.rewards.iter().sum::<f64>() / n;
        let cost = ro.costs.iter().sum::<f64>() / n;
        let loss = ro.losses.iter().map(|l| *l.last().expect("terminal")).sum::<f64>() / n;
        let rates = (0..ro.actions.ncols())
            .map(|m| ro.actions.column(m).sum() / (n * horizon))
            .collect();
        let stats = StepStats {
            step: self.step,
            reward,
            cost,
            loss,
            rates,
            grad_norm: norm,
            learning_rate: lr,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Runs until `config.steps` steps have been taken, reporting every
    /// `log_every` steps through `on_log`.
    pub fn run(
        &mut self,
        data: &[LabeledSequence],
        log_every: usize,
        mut on_log: impl FnMut(&StepStats),
    ) -> Result<Vec<StepStats>> {
        let mut history = Vec::new();
        while self.step < self.config.steps {
            let stats = self.train_step(data)?;
            if log_every > 0 && (stats.step % log_every == 0 || stats.step + 1 == self.config.steps) {
                on_log(&stats);
                history.push(stats);
            }
        }
        self.params.check_finite().map_err(|e| Error::Training {
            step: self.step,
            detail: e.to_string(),
        })?;
        Ok(history)
    }
}

fn arch_horizon(params: &ModelParams) -> f64 {
    params.arch.horizon as f64
}
