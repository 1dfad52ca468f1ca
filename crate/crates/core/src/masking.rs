//! Random input masks for classifier pretraining.
//!
//! Three mechanisms compose, in this order:
//! independent per-cell keeps with probability `p_m`;
//! a uniformly drawn cut-off `t_max` on `{0, ..., T}` after which every
//! cell is masked; and whole-modality drops with probability `drop_m`.

use serde::{Deserialize, Serialize};

use crate::env::ActionMatrix;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub keep_prob: Vec<f64>,
    pub use_max_timestep: bool,
    /// Whole-modality drop probabilities; all zeros disables the mechanism.
    pub drop_prob: Vec<f64>,
}

impl MaskSpec {
    /// Independent keeps only, `p = 0.2`.
    pub fn keep_only(modalities: usize) -> Self {
        Self {
            keep_prob: vec![0.2; modalities],
            use_max_timestep: false,
            drop_prob: vec![0.0; modalities],
        }
    }

    /// Keeps with `p = 0.4` plus the max-timestep cut: expected keep rate 0.2.
    pub fn with_max_timestep(modalities: usize) -> Self {
        Self {
            keep_prob: vec![0.4; modalities],
            use_max_timestep: true,
            drop_prob: vec![0.0; modalities],
        }
    }

    /// All three mechanisms: `p = 0.4`, max-timestep cut, drop rate 0.5.
    pub fn full(modalities: usize) -> Self {
        Self {
            keep_prob: vec![0.4; modalities],
            use_max_timestep: true,
            drop_prob: vec![0.5; modalities],
        }
    }

    /// Everything kept.
    pub fn keep_all(modalities: usize) -> Self {
        Self {
            keep_prob: vec![1.0; modalities],
            use_max_timestep: false,
            drop_prob: vec![0.0; modalities],
        }
    }

    pub fn modalities(&self) -> usize {
        self.keep_prob.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep_prob.len() != self.drop_prob.len() {
            return Err(Error::Config("keep_prob and drop_prob lengths differ".into()));
        }
        let in_unit = |p: &f64| (0.0..=1.0).contains(p);
        if !self.keep_prob.iter().all(in_unit) || !self.drop_prob.iter().all(in_unit) {
            return Err(Error::Config("mask probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self::full(crate::NUM_MODALITIES)
    }
}

/// Draws one mask of shape `horizon x spec.modalities()`.
pub fn sample_mask(spec: &MaskSpec, horizon: usize, rng: &mut SplitMix64) -> ActionMatrix {
    let modalities = spec.modalities();
    let mut mask = ActionMatrix::zeros(horizon, modalities);
    for t in 0..horizon {
        for (m, &p) in spec.keep_prob.iter().enumerate() {
            if rng.bernoulli(p) {
                mask.set(t, m, true);
            }
        }
    }
    if spec.use_max_timestep {
        // Cells at 1-based timesteps beyond t_max are masked.
        let t_max = rng.below(horizon as u64 + 1) as usize;
        for t in t_max..horizon {
            for m in 0..modalities {
                mask.set(t, m, false);
            }
        }
    }
    for (m, &p) in spec.drop_prob.iter().enumerate() {
        if p > 0.0 && rng.bernoulli(p) {
            for t in 0..horizon {
                mask.set(t, m, false);
            }
        }
    }
    mask
}

/// Closed-form expected fraction of kept cells per modality.
///
/// With `t_max` uniform on `{0, ..., T}` the exposed prefix covers
/// `E[t_max] / T = 1/2` of the timesteps for every horizon.
pub fn expected_keep_rate(spec: &MaskSpec, _horizon: usize) -> Vec<f64> {
    let exposure = if spec.use_max_timestep { 0.5 } else { 1.0 };
    spec.keep_prob
        .iter()
        .zip(&spec.drop_prob)
        .map(|(&p, &d)| p * exposure * (1.0 - d))
        .collect()
}
