//! Joint training with straight-through Gumbel actions.
//!
//! The whole episode is unrolled on one tape. Each binary decision uses the
//! two-category Gumbel-softmax: with logits `(z, 0)` for acquire / skip and
//! Gumbel draws `g1, g0`, the relaxed sample is `sigmoid((z + g1 - g0) / tau)`.
//! In straight-through mode the forward value is its hard threshold while the
//! backward pass uses the relaxed sample's derivative. The acquired cells
//! feed the classifier, so the surrogate `C(a) + L` is differentiable in both
//! the policy and the classifier parameters.

use ndarray::Array2;

use super::model::{classifier_logits, policy_head, policy_trunk, prediction_features, ModelParams};
use super::params::BoundBlock;
use super::tape::{Tape, Var};
use crate::env::{Cell, CostSchedule, PROB_FLOOR};
use crate::rng::SplitMix64;
use crate::synthgen::LabeledSequence;
use crate::{Error, Result};

/// Frozen logistic noise `g1 - g0` for every (step, row, modality).
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub steps: Vec<Array2<f64>>,
}

impl GumbelNoise {
    pub fn sample(horizon: usize, rows: usize, modalities: usize, rng: &mut SplitMix64) -> Self {
        let steps = (0..horizon)
            .map(|_| Array2::from_shape_fn((rows, modalities), |_| rng.gumbel() - rng.gumbel()))
            .collect();
        Self { steps }
    }

    pub fn zeros(horizon: usize, rows: usize, modalities: usize) -> Self {
        Self {
            steps: vec![Array2::zeros((rows, modalities)); horizon],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateOptions {
    pub tau: f64,
    /// Hard forward values; `false` keeps the relaxed samples (fully differentiable).
    pub straight_through: bool,
}

/// An unrolled batch of episodes with the surrogate `mean(C(a) + L)` on top.
pub struct Surrogate {
    pub tape: Tape,
    pub objective: Var,
    pub classifier: BoundBlock,
    pub policy: BoundBlock,
    /// Forward action values per step (`rows x M`).
    pub actions: Vec<Array2<f64>>,
    pub mean_cost: f64,
    pub mean_loss: f64,
    pub per_row_loss: Vec<f64>,
}

pub fn build_surrogate(
    params: &ModelParams,
    batch: &[&LabeledSequence],
    costs: &CostSchedule,
    noise: &GumbelNoise,
    opts: SurrogateOptions,
) -> Result<Surrogate> {
    let arch = &params.arch;
    let rows = batch.len();
    let horizon = arch.horizon;
    let modalities = arch.modalities();
    if rows == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if batch.iter().any(|s| s.len() != horizon) {
        return Err(Error::Input("sequence length does not match the architecture".into()));
    }
    if costs.modalities() != modalities || noise.steps.len() != horizon {
        return Err(Error::Input("costs or noise do not match the architecture".into()));
    }
    if !(opts.tau > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature must be positive (got {})", opts.tau)));
    }

    let mut tape = Tape::new();
    let classifier = params.classifier.bind(&mut tape);
    let policy = params.policy.bind(&mut tape);

    // Constant encodings: the all-missing cell per modality and the revealed
    // one-hot per (t, m).
    let missing: Vec<Array2<f64>> = (0..modalities)
        .map(|m| broadcast(rows, &arch.encode_cell(m, Cell::Missing)))
        .collect();
    let missing_vars: Vec<Var> = missing.iter().map(|x| tape.leaf(x.clone())).collect();
    let zero_col = tape.leaf(Array2::zeros((rows, 1)));

    let mut cells: Vec<Vec<Var>> = Vec::with_capacity(horizon);
    let mut acts: Vec<Vec<Var>> = Vec::with_capacity(horizon);
    let mut action_values = Vec::with_capacity(horizon);
    let mut cost_terms: Vec<Var> = Vec::with_capacity(horizon);
    let cost_weights = Array2::from_shape_fn((rows, modalities), |(_, m)| costs.as_slice()[m] / rows as f64);

    for t in 0..horizon {
        let mut parts: Vec<Var> = Vec::with_capacity(2 * horizon * modalities + 2);
        for s in 0..horizon {
            for m in 0..modalities {
                parts.push(if s < t { cells[s][m] } else { missing_vars[m] });
            }
        }
        for s in 0..horizon {
            for m in 0..modalities {
                parts.push(if s < t { acts[s][m] } else { zero_col });
            }
        }
        let mut time = Array2::zeros((rows, horizon));
        time.column_mut(t).fill(1.0);
        parts.push(tape.leaf(time));
        if arch.conditioning {
            // Prediction features are inputs, not a gradient path.
            let prefix = concat_values(&tape, &parts[..horizon * modalities]);
            let probs = super::model::classifier_probs_encoded(params, prefix);
            let feats: Vec<f64> = probs.rows().into_iter().flat_map(|r| prediction_features(&r.to_vec())).collect();
            parts.push(tape.leaf(Array2::from_shape_vec((rows, arch.feature_dim()), feats).expect("features")));
        }
        let x = tape.concat(&parts);
        let trunk = policy_trunk(&mut tape, &params.policy, &policy, x);
        let logits = policy_head(&mut tape, &params.policy, &policy, trunk);
        let g = tape.leaf(noise.steps[t].clone());
        let noisy = tape.add(logits, g);
        let scaled = tape.scale(noisy, 1.0 / opts.tau);
        let relaxed = tape.sigmoid(scaled);
        let a = if opts.straight_through {
            tape.straight_through(relaxed)
        } else {
            relaxed
        };
        action_values.push(tape.value(a).clone());
        cost_terms.push(tape.weighted_sum(a, cost_weights.clone()));

        let mut step_cells = Vec::with_capacity(modalities);
        let mut step_acts = Vec::with_capacity(modalities);
        for m in 0..modalities {
            let col = tape.column(a, m);
            let shown = Array2::from_shape_vec(
                (rows, arch.cell_width(m)),
                batch
                    .iter()
                    .flat_map(|s| arch.encode_cell(m, Cell::Observed(s.value(t, m))))
                    .collect(),
            )
            .expect("cell shape");
            step_cells.push(tape.reveal(col, &missing[m], &shown));
            step_acts.push(col);
        }
        cells.push(step_cells);
        acts.push(step_acts);
    }

    let all_cells: Vec<Var> = cells.iter().flatten().copied().collect();
    let x = tape.concat(&all_cells);
    let logits = classifier_logits(&mut tape, &params.classifier, &classifier, x);
    let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
    if labels.iter().any(|&y| y >= arch.num_classes) {
        return Err(Error::Input("label outside the classifier's label space".into()));
    }
    let per_row = tape.softmax_nll(logits, &labels, PROB_FLOOR);
    let per_row_loss = tape.value(per_row).column(0).to_vec();
    let loss = tape.mean(per_row);
    let mut cost = cost_terms[0];
    for &c in &cost_terms[1..] {
        cost = tape.add(cost, c);
    }
    let mean_cost = tape.scalar(cost);
    let mean_loss = tape.scalar(loss);
    let objective = tape.add(cost, loss);

    Ok(Surrogate {
        tape,
        objective,
        classifier,
        policy,
        actions: action_values,
        mean_cost,
        mean_loss,
        per_row_loss,
    })
}

fn broadcast(rows: usize, row: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((rows, row.len()), |(_, j)| row[j])
}

fn concat_values(tape: &Tape, parts: &[Var]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|v| tape.value(*v).view()).collect();
    ndarray::concatenate(ndarray::Axis(1), &views).expect("concat")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::model::Architecture;
    use crate::synthgen::{draw_sequence, SyntheticConfig};

    fn setup() -> (ModelParams, Vec<LabeledSequence>) {
        let cfg = SyntheticConfig::default();
        let arch = Architecture::for_task(&cfg, 12, false);
        let mut rng = SplitMix64::new(4);
        let mut params = ModelParams::new(arch, &mut rng);
        // Non-zero output layers so the policy is not exactly 0.5 everywhere.
        for v in params.policy.values_mut("p_out.w") {
            *v = 0.3 * rng.normal();
        }
        let seqs = (0..6).map(|_| draw_sequence(&cfg, &mut rng).unwrap()).collect();
        (params, seqs)
    }

    #[test]
    fn hard_actions_are_binary_and_match_noisy_sign() {
        let (params, seqs) = setup();
        let batch: Vec<&LabeledSequence> = seqs.iter().collect();
        let mut rng = SplitMix64::new(1);
        let noise = GumbelNoise::sample(10, batch.len(), 2, &mut rng);
        let costs = CostSchedule::uniform(0.0005, 2).unwrap();
        let s = build_surrogate(&params, &batch, &costs, &noise, SurrogateOptions { tau: 1.0, straight_through: true }).unwrap();
        for a in &s.actions {
            assert!(a.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
        let expected_cost: f64 = s.actions.iter().map(|a| a.sum() * 0.0005).sum::<f64>() / batch.len() as f64;
        assert!((s.mean_cost - expected_cost).abs() < 1e-15);
    }

    #[test]
    fn small_temperature_relaxation_approaches_hard_threshold() {
        let (params, seqs) = setup();
        let batch: Vec<&LabeledSequence> = seqs.iter().collect();
        let mut rng = SplitMix64::new(2);
        let noise = GumbelNoise::sample(10, batch.len(), 2, &mut rng);
        let costs = CostSchedule::uniform(0.0005, 2).unwrap();
        let hard = build_surrogate(&params, &batch, &costs, &noise, SurrogateOptions { tau: 1e-4, straight_through: true }).unwrap();
        let soft = build_surrogate(&params, &batch, &costs, &noise, SurrogateOptions { tau: 1e-4, straight_through: false }).unwrap();
        // Only draws within a few tau of the threshold may disagree.
        let (mut far, mut total) = (0, 0);
        for (h, s) in hard.actions.iter().zip(&soft.actions) {
            for (a, b) in h.iter().zip(s) {
                total += 1;
                far += usize::from((a - b).abs() > 1e-3);
            }
        }
        assert!(far * 100 <= total, "{far} of {total}");
    }

    #[test]
    fn rejects_bad_temperature() {
        let (params, seqs) = setup();
        let batch: Vec<&LabeledSequence> = seqs.iter().collect();
        let noise = GumbelNoise::zeros(10, batch.len(), 2);
        let costs = CostSchedule::uniform(0.0005, 2).unwrap();
        assert!(build_surrogate(&params, &batch, &costs, &noise, SurrogateOptions { tau: 0.0, straight_through: true }).is_err());
    }
}
