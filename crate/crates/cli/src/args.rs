//! Command-line flags. Every flag overrides the matching config-file value.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use a2mt::learner::{ActionSelection, Mode};

use crate::config::{MaskKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "a2mt", version, about = "Cost-aware acquisition on synthetic two-modality sequences")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every generator of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fixed-order reductions (on by default).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train and test datasets.
    Gen(GenArgs),
    /// Oracle acquisition rates of a dataset or of fresh samples.
    Oracle(OracleArgs),
    /// Pretrain the classifier on masked inputs.
    Pretrain(PretrainArgs),
    /// Train an acquisition agent.
    Train(TrainArgs),
    /// Table of accuracy, rates and reward for the agent and baselines.
    Eval(EvalArgs),
    /// Train and evaluate one agent per acquisition cost.
    Sweep(SweepArgs),
    /// Per-timestep acquisition rates of the agent and baselines.
    Pattern(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct TaskArgs {
    /// Sequence length.
    #[arg(long = "t")]
    pub length: Option<usize>,
    /// Smallest digit value.
    #[arg(long)]
    pub digit_lo: Option<i32>,
    /// Largest digit value.
    #[arg(long)]
    pub digit_hi: Option<i32>,
    /// Value every countdown ends on.
    #[arg(long)]
    pub counter_lo: Option<i32>,
    /// Largest countdown start.
    #[arg(long)]
    pub counter_hi: Option<i32>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Training set file (generated in memory when absent).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test set file (generated in memory when absent).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Training sequences to generate.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test sequences to generate.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Training sequences to generate.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test sequences to generate.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Dataset file to measure; fresh samples are drawn when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of fresh samples.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Mask source for the classifier inputs.
    #[arg(long, value_enum)]
    pub masks: Option<MaskKind>,
    /// Optimisation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sequences per step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Build the policy with prediction-feature inputs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub conditioning: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    GumbelJoint,
    A2c,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::GumbelJoint => Mode::GumbelJoint,
            ModeArg::A2c => Mode::A2c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SelectionArg {
    Sample,
    Greedy,
}

impl From<SelectionArg> for ActionSelection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Sample => ActionSelection::Sample,
            SelectionArg::Greedy => ActionSelection::Greedy,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Training mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Optimisation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sequences per step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Gumbel-softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Per-modality costs, comma separated (one value applies to all).
    #[arg(long, value_delimiter = ',')]
    pub costs: Option<Vec<f64>>,
    /// Add the loss-decrease reward at every step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub intermediate: Option<bool>,
    /// Weight of the loss-decrease reward.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Entropy bonus weight.
    #[arg(long)]
    pub entropy_coef: Option<f64>,
    /// Feed the classifier prediction and entropy to the policy.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub conditioning: Option<bool>,
    /// Pretrained parameters for actor-critic training.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Steps between log lines.
    #[arg(long, default_value_t = 500)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Trainer checkpoint or parameter file to evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation passes over the test set.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// How actions are drawn from the policy.
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Per-modality costs, comma separated (one value applies to all).
    #[arg(long, value_delimiter = ',')]
    pub costs: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Cost values to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub costs: Option<Vec<f64>>,
    /// Training mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Optimisation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Hidden layer width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Feed the classifier prediction and entropy to the policy.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub conditioning: Option<bool>,
    /// Evaluation passes over the test set.
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Coordinates compared per check.
    #[arg(long)]
    pub coords: Option<usize>,
    /// Sequences in the probe batch.
    #[arg(long)]
    pub probe: Option<usize>,
    /// Hidden layer width.
    #[arg(long)]
    pub hidden: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn costs_for(value: Vec<f64>) -> Vec<f64> {
    if value.len() == 1 {
        vec![value[0]; a2mt::NUM_MODALITIES]
    } else {
        value
    }
}

impl GlobalArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out, self.out.clone());
        set(&mut cfg.threads, self.threads);
        set(&mut cfg.deterministic, self.deterministic);
    }
}

impl TaskArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.task.length, self.length);
        set(&mut cfg.task.digit_low, self.digit_lo);
        set(&mut cfg.task.digit_high, self.digit_hi);
        set(&mut cfg.task.counter_low, self.counter_lo);
        set(&mut cfg.task.counter_high, self.counter_hi);
    }
}

impl DataArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.train.is_some() {
            cfg.data.train = self.train.clone();
        }
        if self.test.is_some() {
            cfg.data.test = self.test.clone();
        }
        set(&mut cfg.data.n_train, self.n_train);
        set(&mut cfg.data.n_test, self.n_test);
    }
}

impl Command {
    /// Folds the subcommand's flags into `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Gen(a) => {
                a.task.apply(cfg);
                set(&mut cfg.data.n_train, a.n_train);
                set(&mut cfg.data.n_test, a.n_test);
            }
            Command::Oracle(a) => a.task.apply(cfg),
            Command::Pretrain(a) => {
                a.task.apply(cfg);
                a.data.apply(cfg);
                set(&mut cfg.pretrain.masks, a.masks);
                set(&mut cfg.pretrain.steps, a.steps);
                set(&mut cfg.pretrain.batch_size, a.batch_size);
                set(&mut cfg.pretrain.learning_rate, a.lr);
                set(&mut cfg.pretrain.hidden, a.hidden);
                set(&mut cfg.train.conditioning, a.conditioning);
            }
            Command::Train(a) => {
                a.task.apply(cfg);
                a.data.apply(cfg);
                set(&mut cfg.train.mode, a.mode.map(Mode::from));
                set(&mut cfg.train.steps, a.steps);
                set(&mut cfg.train.batch_size, a.batch_size);
                set(&mut cfg.train.learning_rate, a.lr);
                set(&mut cfg.train.hidden, a.hidden);
                set(&mut cfg.train.tau, a.tau);
                set(&mut cfg.train.costs, a.costs.clone().map(costs_for));
                set(&mut cfg.train.intermediate, a.intermediate);
                set(&mut cfg.train.alpha, a.alpha);
                set(&mut cfg.train.gamma, a.gamma);
                set(&mut cfg.train.entropy_coef, a.entropy_coef);
                set(&mut cfg.train.conditioning, a.conditioning);
                if a.classifier.is_some() {
                    cfg.pretrain.classifier = a.classifier.clone();
                }
            }
            Command::Eval(a) | Command::Pattern(a) => {
                a.task.apply(cfg);
                a.data.apply(cfg);
                if a.checkpoint.is_some() {
                    cfg.eval.checkpoint = a.checkpoint.clone();
                }
                set(&mut cfg.eval.repeats, a.repeats);
                set(&mut cfg.eval.selection, a.selection.map(ActionSelection::from));
                set(&mut cfg.train.costs, a.costs.clone().map(costs_for));
            }
            Command::Sweep(a) => {
                a.task.apply(cfg);
                a.data.apply(cfg);
                set(&mut cfg.sweep.costs, a.costs.clone());
                set(&mut cfg.sweep.mode, a.mode.map(Mode::from));
                set(&mut cfg.sweep.steps, a.steps);
                // Sizes both the jointly trained model and the shared classifier.
                set(&mut cfg.train.hidden, a.hidden);
                set(&mut cfg.pretrain.hidden, a.hidden);
                set(&mut cfg.sweep.conditioning, a.conditioning);
                set(&mut cfg.eval.repeats, a.repeats);
            }
            Command::Gradcheck(a) => {
                set(&mut cfg.gradcheck.eps, a.eps);
                set(&mut cfg.gradcheck.coords, a.coords);
                set(&mut cfg.gradcheck.probe, a.probe);
                set(&mut cfg.gradcheck.hidden, a.hidden);
            }
        }
    }
}
