//! Metrics and experiment harnesses.
//!
//! [`evaluate_policy`] plays full episodes with any [`Policy`] and scores the
//! final masked sequences with a classifier. [`confusion_vs_oracle`] and
//! [`acquisition_pattern`] summarise action matrices, and [`run_cost_sweep`]
//! trains one agent per cost and compares it with rate-matched ablations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{ActionMatrix, CostSchedule, Episode};
use crate::learner::model::{classifier_forward, ModelParams};
use crate::learner::{ActionSelection, LearnedPolicy};
use crate::policies::{Policy, RandomOnehotPolicy, RandomRatePolicy};
use crate::rng::{derive_seed_tagged, SplitMix64};
use crate::synthgen::LabeledSequence;
use crate::{Error, Result};

/// Episodes played per policy call.
pub const EVAL_CHUNK: usize = 512;

/// Outcome of one evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub actions: ActionMatrix,
    pub predicted: usize,
    pub label: usize,
    pub cost: f64,
    pub loss: f64,
    /// Predictive entropy of the final distribution (nats).
    pub entropy: f64,
}

/// Index of the largest probability; ties go to the lower index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Plays one episode per sequence with `policy` and scores it with the
/// classifier in `classifier`.
pub fn play_episodes(
    policy: &mut dyn Policy,
    classifier: &ModelParams,
    data: &[LabeledSequence],
    costs: &CostSchedule,
    rng: &mut SplitMix64,
) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_CHUNK) {
        let mut episodes: Vec<Episode> = chunk.iter().map(|s| Episode::reset(s.clone(), costs.clone())).collect();
        let horizon = chunk[0].len();
        if chunk.iter().any(|s| s.len() != horizon) {
            return Err(Error::Input("sequences of different lengths in one dataset".into()));
        }
        policy.reset(episodes.len());
        for t in 0..horizon {
            let actions = policy.act(t, &episodes, rng)?;
            if actions.len() != episodes.len() {
                return Err(Error::State(format!(
                    "policy {} returned {} actions for {} episodes",
                    policy.name(),
                    actions.len(),
                    episodes.len()
                )));
            }
            for (e, a) in episodes.iter_mut().zip(&actions) {
                e.step(a)?;
            }
        }
        let views: Vec<_> = episodes.iter().map(Episode::view).collect();
        let probs = classifier_forward(classifier, &views)?;
        for (e, row) in episodes.iter().zip(probs.rows()) {
            let p = row.to_vec();
            let label = e.truth().label as usize;
            let r = e.finalize(&p, label)?;
            out.push(EpisodeRecord {
                actions: e.actions().clone(),
                predicted: argmax(&p),
                label,
                cost: r.acquisition_cost,
                loss: r.terminal_loss,
                entropy: p.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Mean fraction of timesteps acquired, per modality.
    pub rates: Vec<f64>,
    /// Always `-cost - loss`.
    pub reward: f64,
    pub cost: f64,
    pub loss: f64,
    pub entropy: f64,
}

impl EvalMetrics {
    pub fn from_records(records: &[EpisodeRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::Input("no episodes to summarise".into()))?;
        let n = records.len() as f64;
        let horizon = first.actions.horizon();
        let modalities = first.actions.modalities();
        let mut counts = vec![0usize; modalities];
        let (mut correct, mut cost, mut loss, mut entropy) = (0usize, 0.0, 0.0, 0.0);
        for r in records {
            correct += usize::from(r.predicted == r.label);
            cost += r.cost;
            loss += r.loss;
            entropy += r.entropy;
            for (m, c) in counts.iter_mut().enumerate() {
                *c += r.actions.count(m);
            }
        }
        let cost = cost / n;
        let loss = loss / n;
        Ok(Self {
            n: records.len(),
            accuracy: correct as f64 / n,
            rates: counts.iter().map(|&c| c as f64 / (n * horizon as f64)).collect(),
            reward: -cost - loss,
            cost,
            loss,
            entropy: entropy / n,
        })
    }

    /// Field-wise mean and sample standard deviation over repeats.
    fn aggregate(runs: &[EvalMetrics]) -> (Self, Self) {
        let k = runs.len() as f64;
        let stat = |f: &dyn Fn(&EvalMetrics) -> f64| {
            let mean = runs.iter().map(f).sum::<f64>() / k;
            let var = if runs.len() > 1 {
                runs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            (mean, var.sqrt())
        };
        let modalities = runs[0].rates.len();
        let rates: Vec<(f64, f64)> = (0..modalities).map(|m| stat(&|r| r.rates[m])).collect();
        let acc = stat(&|r| r.accuracy);
        let cost = stat(&|r| r.cost);
        let loss = stat(&|r| r.loss);
        let reward = stat(&|r| r.reward);
        let entropy = stat(&|r| r.entropy);
        let mean = Self {
            n: runs[0].n,
            accuracy: acc.0,
            rates: rates.iter().map(|r| r.0).collect(),
            reward: -cost.0 - loss.0,
            cost: cost.0,
            loss: loss.0,
            entropy: entropy.0,
        };
        let std = Self {
            n: runs.len(),
            accuracy: acc.1,
            rates: rates.iter().map(|r| r.1).collect(),
            reward: reward.1,
            cost: cost.1,
            loss: loss.1,
            entropy: entropy.1,
        };
        (mean, std)
    }
}

/// Metrics of a policy over several repeats of the same dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub mean: EvalMetrics,
    /// Standard deviations over repeats; `std.n` is the repeat count.
    pub std: EvalMetrics,
    pub runs: Vec<EvalMetrics>,
    /// Action matrices of the first repeat, in dataset order.
    #[serde(skip)]
    pub actions: Vec<ActionMatrix>,
}

/// Evaluates `policy` on every sequence `repeats` times, each repeat with
/// its own derived generator.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    classifier: &ModelParams,
    data: &[LabeledSequence],
    costs: &CostSchedule,
    repeats: usize,
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Input("evaluation needs a non-empty dataset".into()));
    }
    if repeats == 0 {
        return Err(Error::Input("evaluation needs at least one repeat".into()));
    }
    let mut runs = Vec::with_capacity(repeats);
    let mut actions = Vec::new();
    for r in 0..repeats {
        let mut rng = SplitMix64::new(derive_seed_tagged(seed, "eval", r as u64));
        let records = play_episodes(policy, classifier, data, costs, &mut rng)?;
        runs.push(EvalMetrics::from_records(&records)?);
        if r == 0 {
            actions = records.into_iter().map(|e| e.actions).collect();
        }
    }
    let (mean, std) = EvalMetrics::aggregate(&runs);
    Ok(EvalReport {
        policy: policy.name(),
        mean,
        std,
        runs,
        actions,
    })
}

/// Agent-vs-oracle decision counts for one modality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Share of oracle acquisitions the agent also made.
    pub fn tp_rate(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// Share of oracle skips the agent also skipped.
    pub fn tn_rate(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Per-modality confusion of agent decisions against oracle decisions.
pub fn confusion_vs_oracle(agent: &[ActionMatrix], oracle: &[ActionMatrix]) -> Result<Vec<ConfusionMatrix>> {
    if agent.len() != oracle.len() {
        return Err(Error::Input(format!(
            "{} agent episodes against {} oracle episodes",
            agent.len(),
            oracle.len()
        )));
    }
    let modalities = agent.first().map_or(0, ActionMatrix::modalities);
    let mut out = vec![ConfusionMatrix::default(); modalities];
    for (a, o) in agent.iter().zip(oracle) {
        if a.horizon() != o.horizon() || a.modalities() != o.modalities() || a.modalities() != modalities {
            return Err(Error::Input("action matrices differ in shape".into()));
        }
        for t in 0..a.horizon() {
            for (m, c) in out.iter_mut().enumerate() {
                match (a.get(t, m), o.get(t, m)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
    }
    Ok(out)
}

/// Mean acquisition per timestep and modality (`[t][m]`). Empty input gives
/// an empty pattern.
pub fn acquisition_pattern(actions: &[ActionMatrix]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = actions.first() else {
        return Ok(Vec::new());
    };
    let (horizon, modalities) = (first.horizon(), first.modalities());
    let mut sums = vec![vec![0u64; modalities]; horizon];
    for a in actions {
        if a.horizon() != horizon || a.modalities() != modalities {
            return Err(Error::Input("action matrices differ in shape".into()));
        }
        for (t, row) in sums.iter_mut().enumerate() {
            for (m, s) in row.iter_mut().enumerate() {
                *s += u64::from(a.get(t, m));
            }
        }
    }
    let n = actions.len() as f64;
    Ok(sums
        .into_iter()
        .map(|row| row.into_iter().map(|s| s as f64 / n).collect())
        .collect())
}

/// One cost of a sweep: the agent and its two rate-matched ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cost: f64,
    pub agent: Option<EvalReport>,
    pub random_rate: Option<EvalReport>,
    pub random_1hot: Option<EvalReport>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn agent_rate(&self) -> Option<f64> {
        self.agent.as_ref().map(|a| mean_rate(&a.mean.rates))
    }
}

pub fn mean_rate(rates: &[f64]) -> f64 {
    rates.iter().sum::<f64>() / rates.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub repeats: usize,
    pub seed: u64,
    pub selection: ActionSelection,
}

/// Trains an agent per cost with `train` and evaluates it next to a
/// Random-Rate and a Random-1Hot ablation built from the agent's measured
/// rates. A failing cost is recorded on its row and the sweep moves on.
pub fn run_cost_sweep(
    cost_values: &[f64],
    modalities: usize,
    test: &[LabeledSequence],
    opts: SweepOptions,
    mut train: impl FnMut(f64) -> Result<Arc<ModelParams>>,
) -> Result<Vec<SweepRow>> {
    if cost_values.is_empty() {
        return Err(Error::Input("cost sweep needs at least one cost".into()));
    }
    if test.is_empty() {
        return Err(Error::Input("cost sweep needs a non-empty test set".into()));
    }
    let mut rows = Vec::with_capacity(cost_values.len());
    for (i, &cost) in cost_values.iter().enumerate() {
        let seed = derive_seed_tagged(opts.seed, "sweep", i as u64);
        let row = sweep_one(cost, modalities, test, opts, seed, &mut train).unwrap_or_else(|e| SweepRow {
            cost,
            agent: None,
            random_rate: None,
            random_1hot: None,
            error: Some(e.to_string()),
        });
        rows.push(row);
    }
    Ok(rows)
}

fn sweep_one(
    cost: f64,
    modalities: usize,
    test: &[LabeledSequence],
    opts: SweepOptions,
    seed: u64,
    train: &mut impl FnMut(f64) -> Result<Arc<ModelParams>>,
) -> Result<SweepRow> {
    let costs = CostSchedule::uniform(cost, modalities)?;
    let params = train(cost)?;
    let horizon = params.arch.horizon;
    let mut agent = LearnedPolicy::new(params.clone(), opts.selection).named("agent");
    let agent_report = evaluate_policy(&mut agent, &params, test, &costs, opts.repeats, seed)?;
    let rates = agent_report.mean.rates.clone();
    let mut rr = RandomRatePolicy::new(rates.clone())?;
    let rr_report = evaluate_policy(&mut rr, &params, test, &costs, opts.repeats, seed)?;
    let mut oh = RandomOnehotPolicy::from_rates(&rates, horizon)?;
    let oh_report = evaluate_policy(&mut oh, &params, test, &costs, opts.repeats, seed)?;
    Ok(SweepRow {
        cost,
        agent: Some(agent_report),
        random_rate: Some(rr_report),
        random_1hot: Some(oh_report),
        error: None,
    })
}

/// Whether the agent's mean rate never rises as the cost grows (rows in
/// increasing cost order; failed rows are skipped).
pub fn rate_non_increasing(rows: &[SweepRow]) -> bool {
    let rates: Vec<f64> = rows.iter().filter_map(SweepRow::agent_rate).collect();
    rates.windows(2).all(|w| w[1] <= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::model::Architecture;
    use crate::policies::{AlwaysPolicy, NeverPolicy, OraclePolicy};
    use crate::synthgen::{draw_sequence, oracle_actions, SyntheticConfig};

    fn setup(n: usize) -> (SyntheticConfig, Vec<LabeledSequence>, ModelParams) {
        let cfg = SyntheticConfig::default();
        let mut rng = SplitMix64::new(17);
        let data = (0..n).map(|_| draw_sequence(&cfg, &mut rng).unwrap()).collect();
        let params = ModelParams::new(Architecture::for_task(&cfg, 8, false), &mut rng);
        (cfg, data, params)
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn never_policy_costs_nothing_and_reward_identity_holds() {
        let (_, data, params) = setup(300);
        let costs = CostSchedule::uniform(0.01, 2).unwrap();
        let r = evaluate_policy(&mut NeverPolicy::default(), &params, &data, &costs, 2, 0).unwrap();
        assert_eq!(r.mean.rates, vec![0.0, 0.0]);
        assert_eq!(r.mean.cost, 0.0);
        assert_eq!(r.mean.reward, -r.mean.cost - r.mean.loss);
        assert_eq!(r.std.accuracy, 0.0);
        let a = evaluate_policy(&mut AlwaysPolicy, &params, &data, &costs, 1, 0).unwrap();
        assert_eq!(a.mean.rates, vec![1.0, 1.0]);
        assert!((a.mean.cost - 0.2).abs() < 1e-12);
        assert_eq!(a.mean.reward, -a.mean.cost - a.mean.loss);
    }

    #[test]
    fn oracle_policy_matches_offline_oracle_actions() {
        let (cfg, data, params) = setup(200);
        let costs = CostSchedule::uniform(0.0, 2).unwrap();
        let r = evaluate_policy(&mut OraclePolicy::new(cfg.counter_low), &params, &data, &costs, 1, 0).unwrap();
        let offline: Vec<ActionMatrix> = data.iter().map(|s| oracle_actions(&s.counter, cfg.counter_low).unwrap()).collect();
        let cm = confusion_vs_oracle(&r.actions, &offline).unwrap();
        for c in &cm {
            assert_eq!((c.fp, c.fn_), (0, 0));
            assert_eq!(c.total(), 200 * 10);
        }
        let flipped: Vec<ActionMatrix> = offline.iter().map(ActionMatrix::complement).collect();
        for c in confusion_vs_oracle(&flipped, &offline).unwrap() {
            assert_eq!((c.tp, c.tn), (0, 0));
        }
    }

    #[test]
    fn confusion_rejects_shape_mismatch() {
        let a = vec![ActionMatrix::zeros(3, 2)];
        assert!(confusion_vs_oracle(&a, &[]).is_err());
        assert!(confusion_vs_oracle(&a, &[ActionMatrix::zeros(4, 2)]).is_err());
    }

    #[test]
    fn pattern_of_random_rate_is_near_half() {
        let mut rng = SplitMix64::new(4);
        let acts: Vec<ActionMatrix> = (0..4000)
            .map(|_| crate::policies::random_rate_actions(&[0.5, 0.5], 10, &mut rng).unwrap())
            .collect();
        let sigma = (0.25f64 / 4000.0).sqrt();
        for row in acquisition_pattern(&acts).unwrap() {
            for v in row {
                assert!((v - 0.5).abs() < 3.5 * sigma, "{v}");
            }
        }
        assert!(acquisition_pattern(&[]).unwrap().is_empty());
    }

    #[test]
    fn sweep_records_failures_and_keeps_going() {
        let (cfg, data, params) = setup(100);
        let params = Arc::new(params);
        let opts = SweepOptions { repeats: 2, seed: 3, selection: ActionSelection::Sample };
        let rows = run_cost_sweep(&[0.0, 0.1], 2, &data, opts, |c| {
            if c > 0.05 {
                Err(Error::Training { step: 0, detail: "diverged".into() })
            } else {
                Ok(params.clone())
            }
        })
        .unwrap();
        assert!(rows[0].error.is_none() && rows[1].error.is_some());
        let agent = rows[0].agent.as_ref().unwrap();
        assert!(agent.mean.rates.iter().all(|r| (0.0..=1.0).contains(r)));
        assert_eq!(cfg.length, 10);
        assert!(run_cost_sweep(&[], 2, &data, opts, |_| Ok(params.clone())).is_err());
    }

    #[test]
    fn ablations_match_agent_expected_cost() {
        let costs = CostSchedule::new(vec![0.003, 0.0007]).unwrap();
        let rates = [0.462, 0.688];
        let agent_cost: f64 = rates.iter().zip(costs.as_slice()).map(|(r, c)| r * 10.0 * c).sum();
        let rr = RandomRatePolicy::new(rates.to_vec()).unwrap();
        let oh = RandomOnehotPolicy::from_rates(&rates, 10).unwrap();
        assert!((rr.expected_cost(10, &costs) - agent_cost).abs() < 1e-9);
        assert!((oh.expected_cost(&costs) - agent_cost).abs() < 1e-9);
    }
}
