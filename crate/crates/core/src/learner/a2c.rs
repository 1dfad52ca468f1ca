//! Advantage actor-critic for the policy with a frozen classifier.
//!
//! Episodes are rolled out without a tape. Per-step rewards are the negative
//! acquisition costs, optionally the shaping term
//! `-alpha * (L_t - gamma * L_{t-1})`, and `-L_T` on the final step. Returns
//! are discounted suffix sums; the policy ascends
//! `sum_t log pi(a_t | o_t) * (G_t - b(o_t))` plus an entropy bonus, and the
//! baseline is regressed onto `G_t`.

use ndarray::Array2;

use super::model::{baseline_head, policy_head, policy_trunk, prediction_features, ModelParams};
use super::tape::{sigmoid, Tape};
use crate::env::{nll, CostSchedule, Episode};
use crate::synthgen::LabeledSequence;
use crate::{Error, Result};

/// Everything the policy-gradient update needs from a batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub episodes: usize,
    pub horizon: usize,
    /// Policy inputs, row `t * episodes + b`.
    pub inputs: Array2<f64>,
    /// Actions taken, same row order.
    pub actions: Array2<f64>,
    /// Per-step rewards, same row order.
    pub rewards: Vec<f64>,
    /// Classifier losses `L_0..L_T` per episode.
    pub losses: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    /// Final predicted distributions per episode.
    pub predictions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardOptions {
    pub intermediate: bool,
    pub alpha: f64,
    pub gamma: f64,
}

/// Rolls out one episode per sequence. `choose(b, t, probs)` picks the action
/// of episode `b` at step `t` from the policy's acquisition probabilities.
pub fn rollout(
    params: &ModelParams,
    batch: &[&LabeledSequence],
    costs: &CostSchedule,
    rewards: RewardOptions,
    mut choose: impl FnMut(usize, usize, &[f64]) -> Vec<bool>,
) -> Result<Rollout> {
    let arch = &params.arch;
    let n = batch.len();
    let horizon = arch.horizon;
    let modalities = arch.modalities();
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let mut episodes: Vec<Episode> = batch
        .iter()
        .map(|s| Episode::reset((*s).clone(), costs.clone()))
        .collect();
    let dim = arch.policy_input_dim();
    let mut inputs = Vec::with_capacity(n * horizon * dim);
    let mut actions = Vec::with_capacity(n * horizon * modalities);
    let mut step_costs = vec![0.0; n * horizon];
    let mut losses = vec![Vec::with_capacity(horizon + 1); n];
    let need_classifier = arch.conditioning || rewards.intermediate;

    for t in 0..horizon {
        let features = if need_classifier {
            let probs = predict(params, &episodes)?;
            for (b, e) in episodes.iter().enumerate() {
                losses[b].push(nll(&probs[b], e.truth().label as usize));
            }
            Some(probs.iter().map(|p| prediction_features(p)).collect::<Vec<_>>())
        } else {
            None
        };
        let start = inputs.len();
        for (b, e) in episodes.iter().enumerate() {
            let f = features.as_ref().map(|f| f[b].as_slice());
            arch.policy_input_row(e.view(), e.actions(), t, f.filter(|_| arch.conditioning), &mut inputs);
        }
        let x = Array2::from_shape_vec((n, dim), inputs[start..].to_vec()).expect("input shape");
        let probs = super::model::policy_logits_encoded(params, x).mapv(sigmoid);
        for (b, e) in episodes.iter_mut().enumerate() {
            let a = choose(b, t, probs.row(b).as_slice().expect("contiguous"));
            actions.extend(a.iter().map(|&v| if v { 1.0 } else { 0.0 }));
            step_costs[t * n + b] = e.step(&a)?;
        }
    }
    let final_probs = predict(params, &episodes)?;
    for (b, e) in episodes.iter().enumerate() {
        let l = nll(&final_probs[b], e.truth().label as usize);
        losses[b].push(l);
    }

    let mut reward = vec![0.0; n * horizon];
    for b in 0..n {
        for t in 0..horizon {
            let mut r = -step_costs[t * n + b];
            if rewards.intermediate {
                r += -rewards.alpha * (losses[b][t + 1] - rewards.gamma * losses[b][t]);
            }
            if t + 1 == horizon {
                r -= *losses[b].last().expect("terminal loss");
            }
            reward[t * n + b] = r;
        }
    }
    let costs_per_episode = episodes.iter().map(Episode::accumulated_cost).collect();
    Ok(Rollout {
        episodes: n,
        horizon,
        inputs: Array2::from_shape_vec((n * horizon, dim), inputs).expect("inputs"),
        actions: Array2::from_shape_vec((n * horizon, modalities), actions).expect("actions"),
        rewards: reward,
        losses,
        costs: costs_per_episode,
        predictions: final_probs,
    })
}

fn predict(params: &ModelParams, episodes: &[Episode]) -> Result<Vec<Vec<f64>>> {
    let views: Vec<_> = episodes.iter().map(Episode::view).collect();
    let probs = super::model::classifier_forward(params, &views)?;
    Ok(probs.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Discounted suffix sums of per-step rewards, per episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cOptions {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Subtract the learned baseline; `false` uses raw returns as advantages.
    pub use_baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A2cGradients {
    pub policy: Vec<f64>,
    pub baseline: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub loss: f64,
}

/// Gradients of the actor-critic loss (to be minimised) for a rollout.
///
/// The policy part is `-(1/B) sum_{b,t} log pi(a|o) * A` minus the entropy
/// bonus; the baseline part is `value_coef * (1/B) sum (b(o) - G)^2`.
pub fn a2c_gradients(params: &ModelParams, rollout: &Rollout, opts: A2cOptions) -> Result<A2cGradients> {
    let n = rollout.episodes;
    let horizon = rollout.horizon;
    let rows = n * horizon;
    let mut returns = vec![0.0; rows];
    for b in 0..n {
        let r: Vec<f64> = (0..horizon).map(|t| rollout.rewards[t * n + b]).collect();
        for (t, g) in discounted_returns(&r, opts.gamma).into_iter().enumerate() {
            returns[t * n + b] = g;
        }
    }

    let mut tape = Tape::new();
    let policy = params.policy.bind(&mut tape);
    let baseline = params.baseline.bind(&mut tape);
    let x = tape.leaf(rollout.inputs.clone());
    let trunk = policy_trunk(&mut tape, &params.policy, &policy, x);
    let logits = policy_head(&mut tape, &params.policy, &policy, trunk);
    let values = baseline_head(&mut tape, &params.baseline, &baseline, trunk);

    let advantages: Vec<f64> = if opts.use_baseline {
        returns
            .iter()
            .zip(tape.value(values).column(0))
            .map(|(g, v)| g - v)
            .collect()
    } else {
        returns.clone()
    };
    let modalities = rollout.actions.ncols();
    let inv_n = 1.0 / n as f64;
    let pg_weights = Array2::from_shape_fn((rows, modalities), |(r, _)| -advantages[r] * inv_n);
    let logp = tape.bernoulli_log_prob(logits, rollout.actions.clone());
    let mut total = tape.weighted_sum(logp, pg_weights);
    if opts.entropy_coef != 0.0 {
        let h = tape.bernoulli_entropy(logits);
        let bonus = tape.weighted_sum(h, Array2::from_elem((rows, modalities), -opts.entropy_coef * inv_n));
        total = tape.add(total, bonus);
    }
    if opts.use_baseline && opts.value_coef != 0.0 {
        let target = Array2::from_shape_vec((rows, 1), returns.clone()).expect("returns");
        let se = tape.squared_error(values, target);
        let vl = tape.weighted_sum(se, Array2::from_elem((rows, 1), opts.value_coef * inv_n));
        total = tape.add(total, vl);
    }
    let loss = tape.scalar(total);
    let grads = tape.backward(total);
    Ok(A2cGradients {
        policy: params.policy.gradient(&policy, &grads),
        baseline: params.baseline.gradient(&baseline, &grads),
        returns,
        advantages,
        loss,
    })
}
