//! Classifier pretraining on masked inputs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{classifier_logits, ModelParams};
use super::optim::{clip_global_norm, learning_rate, Adam, LrSchedule};
use super::tape::Tape;
use crate::env::{ActionMatrix, MaskedSequence, PROB_FLOOR};
use crate::masking::{sample_mask, MaskSpec};
use crate::rng::{derive_seed_tagged, SplitMix64};
use crate::synthgen::{oracle_actions, LabeledSequence};
use crate::{Error, Result};

/// Where the pretraining masks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Random masks from the pretraining samplers.
    Random(MaskSpec),
    /// The oracle schedule of each sequence.
    Oracle { counter_low: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Size of the fixed probe subset the loss is tracked on.
    pub probe_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 256,
            learning_rate: 1e-3,
            schedule: LrSchedule::Cosine,
            weight_decay: 1e-6,
            grad_clip: 10.0,
            seed: 0,
            probe_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean loss on the probe subset before training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `(step, mean batch loss)` every `log_every` steps.
    pub curve: Vec<(usize, f64)>,
}

fn mask_for(source: &MaskSource, seq: &LabeledSequence, horizon: usize, modalities: usize, rng: &mut SplitMix64) -> Result<ActionMatrix> {
    match source {
        MaskSource::Random(spec) => {
            debug_assert_eq!(spec.modalities(), modalities);
            Ok(sample_mask(spec, horizon, rng))
        }
        MaskSource::Oracle { counter_low } => oracle_actions(&seq.counter, *counter_low),
    }
}

fn encode_batch(
    params: &ModelParams,
    batch: &[&LabeledSequence],
    source: &MaskSource,
    rng: &mut SplitMix64,
) -> Result<Array2<f64>> {
    let arch = &params.arch;
    let views = batch
        .iter()
        .map(|s| {
            let mask = mask_for(source, s, arch.horizon, arch.modalities(), rng)?;
            MaskedSequence::from_actions(s, &mask)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MaskedSequence> = views.iter().collect();
    arch.classifier_input(&refs)
}

/// Mean masked negative log-likelihood and its classifier gradient.
pub fn classifier_loss_and_gradient(params: &ModelParams, x: Array2<f64>, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = params.classifier.bind(&mut tape);
    let x = tape.leaf(x);
    let logits = classifier_logits(&mut tape, &params.classifier, &bound, x);
    let per_row = tape.softmax_nll(logits, labels, PROB_FLOOR);
    let loss = tape.mean(per_row);
    let grads = tape.backward(loss);
    (tape.scalar(loss), params.classifier.gradient(&bound, &grads))
}

fn probe_loss(params: &ModelParams, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let bound = params.classifier.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let logits = classifier_logits(&mut tape, &params.classifier, &bound, xv);
    let per_row = tape.softmax_nll(logits, labels, PROB_FLOOR);
    let loss = tape.mean(per_row);
    tape.scalar(loss)
}

/// Minimises the expected masked negative log-likelihood of the classifier.
///
/// Only the classifier block of `params` changes. The probe subset (the
/// first `probe_size` sequences with one fixed mask draw each) measures the
/// loss before and after training.
pub fn pretrain_classifier(
    params: &mut ModelParams,
    data: &[LabeledSequence],
    source: &MaskSource,
    cfg: &PretrainConfig,
    log_every: usize,
    mut on_log: impl FnMut(usize, f64),
) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if let MaskSource::Random(spec) = source {
        spec.validate()?;
        if spec.modalities() != params.arch.modalities() {
            return Err(Error::Config("mask spec does not match the number of modalities".into()));
        }
    }
    let mut probe_rng = SplitMix64::new(derive_seed_tagged(cfg.seed, "pretrain-probe", 0));
    let probe: Vec<&LabeledSequence> = data.iter().take(cfg.probe_size.max(1)).collect();
    let probe_x = encode_batch(params, &probe, source, &mut probe_rng)?;
    let probe_labels: Vec<usize> = probe.iter().map(|s| s.label as usize).collect();
    let initial_loss = probe_loss(params, &probe_x, &probe_labels);

    let mut rng = SplitMix64::new(derive_seed_tagged(cfg.seed, "pretrain", 0));
    let mut opt = Adam::new(params.classifier.len(), cfg.weight_decay);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let batch: Vec<&LabeledSequence> = (0..cfg.batch_size)
            .map(|_| &data[rng.below(data.len() as u64) as usize])
            .collect();
        let x = encode_batch(params, &batch, source, &mut rng)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
        let (loss, mut grad) = classifier_loss_and_gradient(params, x, &labels);
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("pretraining loss became {loss}"),
            });
        }
        clip_global_norm(&mut [&mut grad], cfg.grad_clip);
        let lr = learning_rate(cfg.schedule, cfg.learning_rate, step, cfg.steps);
        opt.step(&mut params.classifier.data, &grad, lr);
        if log_every > 0 && (step % log_every == 0 || step + 1 == cfg.steps) {
            on_log(step, loss);
            curve.push((step, loss));
        }
    }
    params.classifier.check_finite("classifier")?;
    Ok(PretrainReport {
        initial_loss,
        final_loss: probe_loss(params, &probe_x, &probe_labels),
        curve,
    })
}
