//! Network architecture, input encoding and forward passes.
//!
//! Three feed-forward networks with two ReLU hidden layers each:
//! the classifier over the flattened masked sequence; the policy over the
//! masked prefix, the action history, a one-hot of the current timestep and
//! optionally the classifier's current prediction; and the baseline, which
//! shares the policy's first hidden layer.
//!
//! A cell of modality `m` with value range `[lo, hi]` is encoded as a
//! one-hot over the `hi - lo + 1` values plus a trailing "missing" channel.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{BoundBlock, ParamBlock};
use super::tape::{softmax_rows, Tape, Var};
use crate::env::{ActionMatrix, Cell, MaskedSequence};
use crate::rng::SplitMix64;
use crate::synthgen::SyntheticConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub horizon: usize,
    pub value_ranges: Vec<(i32, i32)>,
    pub num_classes: usize,
    pub hidden: usize,
    /// Policy input carries the classifier's class probabilities and entropy.
    pub conditioning: bool,
}

impl Architecture {
    pub fn for_task(cfg: &SyntheticConfig, hidden: usize, conditioning: bool) -> Self {
        Self {
            horizon: cfg.length,
            value_ranges: cfg.value_ranges(),
            num_classes: cfg.num_classes(),
            hidden,
            conditioning,
        }
    }

    pub fn modalities(&self) -> usize {
        self.value_ranges.len()
    }

    pub fn cell_width(&self, m: usize) -> usize {
        let (lo, hi) = self.value_ranges[m];
        (hi - lo) as usize + 2
    }

    pub fn step_width(&self) -> usize {
        (0..self.modalities()).map(|m| self.cell_width(m)).sum()
    }

    pub fn classifier_input_dim(&self) -> usize {
        self.horizon * self.step_width()
    }

    pub fn feature_dim(&self) -> usize {
        if self.conditioning {
            self.num_classes + 1
        } else {
            0
        }
    }

    pub fn policy_input_dim(&self) -> usize {
        self.classifier_input_dim() + self.horizon * self.modalities() + self.horizon + self.feature_dim()
    }

    /// One-hot encoding of a single cell.
    pub fn encode_cell(&self, m: usize, cell: Cell) -> Vec<f64> {
        let w = self.cell_width(m);
        let mut out = vec![0.0; w];
        match cell {
            Cell::Observed(v) => out[(v - self.value_ranges[m].0) as usize] = 1.0,
            Cell::Missing => out[w - 1] = 1.0,
        }
        out
    }

    /// Flattened cells of `view`; timesteps at or after `upto` read as missing.
    pub fn encode_view_into(&self, view: &MaskedSequence, upto: usize, out: &mut Vec<f64>) {
        for t in 0..self.horizon {
            for m in 0..self.modalities() {
                let cell = if t < upto { view.get(t, m) } else { Cell::Missing };
                out.extend(self.encode_cell(m, cell));
            }
        }
    }

    pub fn classifier_input(&self, views: &[&MaskedSequence]) -> Result<Array2<f64>> {
        let dim = self.classifier_input_dim();
        let mut flat = Vec::with_capacity(views.len() * dim);
        for v in views {
            self.check_view(v)?;
            self.encode_view_into(v, self.horizon, &mut flat);
        }
        Ok(Array2::from_shape_vec((views.len(), dim), flat).expect("encoding shape"))
    }

    /// Policy input for the decision at timestep `t`: only cells and actions
    /// strictly before `t` are visible.
    pub fn policy_input_row(
        &self,
        view: &MaskedSequence,
        actions: &ActionMatrix,
        t: usize,
        features: Option<&[f64]>,
        out: &mut Vec<f64>,
    ) {
        self.encode_view_into(view, t, out);
        for s in 0..self.horizon {
            for m in 0..self.modalities() {
                out.push(if s < t && actions.get(s, m) { 1.0 } else { 0.0 });
            }
        }
        out.extend((0..self.horizon).map(|s| if s == t { 1.0 } else { 0.0 }));
        if self.conditioning {
            let f = features.expect("conditioning enabled but no prediction features given");
            debug_assert_eq!(f.len(), self.feature_dim());
            out.extend_from_slice(f);
        }
    }

    fn check_view(&self, v: &MaskedSequence) -> Result<()> {
        if v.horizon() != self.horizon || v.modalities() != self.modalities() {
            return Err(Error::Input(format!(
                "view shape {}x{} does not match architecture {}x{}",
                v.horizon(),
                v.modalities(),
                self.horizon,
                self.modalities()
            )));
        }
        Ok(())
    }
}

/// Class probabilities followed by their entropy (nats).
pub fn prediction_features(probs: &[f64]) -> Vec<f64> {
    let entropy: f64 = probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    let mut f = probs.to_vec();
    f.push(entropy);
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub classifier: ParamBlock,
    pub policy: ParamBlock,
    pub baseline: ParamBlock,
}

impl ModelParams {
    pub fn new(arch: Architecture, rng: &mut SplitMix64) -> Self {
        let h = arch.hidden;
        let mut classifier = ParamBlock::new(&[
            ("c1.w", arch.classifier_input_dim(), h),
            ("c1.b", 1, h),
            ("c2.w", h, h),
            ("c2.b", 1, h),
            ("c_out.w", h, arch.num_classes),
            ("c_out.b", 1, arch.num_classes),
        ]);
        let mut policy = ParamBlock::new(&[
            ("p1.w", arch.policy_input_dim(), h),
            ("p1.b", 1, h),
            ("p2.w", h, h),
            ("p2.b", 1, h),
            ("p_out.w", h, arch.modalities()),
            ("p_out.b", 1, arch.modalities()),
        ]);
        let mut baseline = ParamBlock::new(&[
            ("b2.w", h, h),
            ("b2.b", 1, h),
            ("b_out.w", h, 1),
            ("b_out.b", 1, 1),
        ]);
        classifier.init(rng, &["c_out.w"]);
        policy.init(rng, &["p_out.w"]);
        baseline.init(rng, &["b_out.w"]);
        Self {
            arch,
            classifier,
            policy,
            baseline,
        }
    }

    pub fn checksum(&self) -> String {
        super::params::checksum([&self.classifier, &self.policy, &self.baseline])
    }

    pub fn check_finite(&self) -> Result<()> {
        self.classifier.check_finite("classifier")?;
        self.policy.check_finite("policy")?;
        self.baseline.check_finite("baseline")
    }
}

fn layer(tape: &mut Tape, block: &ParamBlock, bound: &BoundBlock, x: Var, name: &str, relu: bool) -> Var {
    let w = bound.var(block, &format!("{name}.w"));
    let b = bound.var(block, &format!("{name}.b"));
    let y = tape.affine(x, w, b);
    if relu {
        tape.relu(y)
    } else {
        y
    }
}

/// Classifier logits for an encoded batch.
pub fn classifier_logits(tape: &mut Tape, block: &ParamBlock, bound: &BoundBlock, x: Var) -> Var {
    let h = layer(tape, block, bound, x, "c1", true);
    let h = layer(tape, block, bound, h, "c2", true);
    layer(tape, block, bound, h, "c_out", false)
}

/// Shared first hidden layer of the policy and the baseline.
pub fn policy_trunk(tape: &mut Tape, block: &ParamBlock, bound: &BoundBlock, x: Var) -> Var {
    layer(tape, block, bound, x, "p1", true)
}

/// Per-modality acquisition logits from the trunk activations.
pub fn policy_head(tape: &mut Tape, block: &ParamBlock, bound: &BoundBlock, trunk: Var) -> Var {
    let h = layer(tape, block, bound, trunk, "p2", true);
    layer(tape, block, bound, h, "p_out", false)
}

/// Baseline value estimates (`rows x 1`) from the trunk activations.
pub fn baseline_head(tape: &mut Tape, block: &ParamBlock, bound: &BoundBlock, trunk: Var) -> Var {
    let h = layer(tape, block, bound, trunk, "b2", true);
    layer(tape, block, bound, h, "b_out", false)
}

/// Class probabilities for a batch of masked sequences.
pub fn classifier_forward(params: &ModelParams, views: &[&MaskedSequence]) -> Result<Array2<f64>> {
    let x = params.arch.classifier_input(views)?;
    Ok(classifier_probs_encoded(params, x))
}

pub fn classifier_probs_encoded(params: &ModelParams, x: Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let bound = params.classifier.bind(&mut tape);
    let x = tape.leaf(x);
    let logits = classifier_logits(&mut tape, &params.classifier, &bound, x);
    softmax_rows(tape.value(logits))
}

/// Acquisition probabilities (`rows x M`) for encoded policy inputs.
pub fn policy_probs_encoded(params: &ModelParams, x: Array2<f64>) -> Array2<f64> {
    policy_logits_encoded(params, x).mapv(super::tape::sigmoid)
}

pub fn policy_logits_encoded(params: &ModelParams, x: Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let bound = params.policy.bind(&mut tape);
    let x = tape.leaf(x);
    let trunk = policy_trunk(&mut tape, &params.policy, &bound, x);
    let logits = policy_head(&mut tape, &params.policy, &bound, trunk);
    tape.value(logits).clone()
}

/// Acquisition probabilities for the decision at timestep `t`.
pub fn policy_forward(
    params: &ModelParams,
    view: &MaskedSequence,
    actions: &ActionMatrix,
    t: usize,
    features: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let arch = &params.arch;
    if t >= arch.horizon {
        return Err(Error::Input(format!("timestep {t} beyond horizon {}", arch.horizon)));
    }
    if arch.conditioning && features.map(<[f64]>::len) != Some(arch.feature_dim()) {
        return Err(Error::Input("policy conditioning needs prediction features".into()));
    }
    let mut row = Vec::with_capacity(arch.policy_input_dim());
    arch.policy_input_row(view, actions, t, features, &mut row);
    let x = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
    Ok(policy_probs_encoded(params, x).row(0).to_vec())
}
