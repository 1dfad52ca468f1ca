//! A trained policy behind the [`Policy`] interface.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{classifier_forward, policy_probs_encoded, prediction_features, ModelParams};
use crate::env::{ActionVector, Episode};
use crate::policies::Policy;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// How acquisition probabilities become decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSelection {
    /// Bernoulli draw with the policy's probability.
    #[default]
    Sample,
    /// Acquire when the probability exceeds 1/2.
    Greedy,
}

#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    params: Arc<ModelParams>,
    selection: ActionSelection,
    label: String,
}

impl LearnedPolicy {
    pub fn new(params: Arc<ModelParams>, selection: ActionSelection) -> Self {
        Self {
            params,
            selection,
            label: "learned".into(),
        }
    }

    pub fn named(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Acquisition probabilities for every episode at timestep `t`.
    pub fn probabilities(&self, t: usize, episodes: &[Episode]) -> Result<Array2<f64>> {
        let arch = &self.params.arch;
        if let Some(e) = episodes.iter().find(|e| e.t() != t) {
            return Err(Error::State(format!("episode is at step {} but policy asked for step {t}", e.t())));
        }
        let features = if arch.conditioning {
            let views: Vec<_> = episodes.iter().map(Episode::view).collect();
            let probs = classifier_forward(&self.params, &views)?;
            Some(probs.rows().into_iter().map(|r| prediction_features(&r.to_vec())).collect::<Vec<_>>())
        } else {
            None
        };
        let dim = arch.policy_input_dim();
        let mut flat = Vec::with_capacity(episodes.len() * dim);
        for (b, e) in episodes.iter().enumerate() {
            let f = features.as_ref().map(|f| f[b].as_slice());
            arch.policy_input_row(e.view(), e.actions(), t, f, &mut flat);
        }
        let x = Array2::from_shape_vec((episodes.len(), dim), flat).expect("policy input shape");
        Ok(policy_probs_encoded(&self.params, x))
    }
}

impl Policy for LearnedPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self, _batch: usize) {}

    fn act(&mut self, t: usize, episodes: &[Episode], rng: &mut SplitMix64) -> Result<Vec<ActionVector>> {
        if episodes.is_empty() {
            return Ok(Vec::new());
        }
        let probs = self.probabilities(t, episodes)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .map(|&p| match self.selection {
                        ActionSelection::Sample => rng.bernoulli(p),
                        ActionSelection::Greedy => p > 0.5,
                    })
                    .collect()
            })
            .collect())
    }
}
