//! Reverse-mode gradients against central finite differences.

use ndarray::Array2;

use super::gumbel::{build_surrogate, GumbelNoise, SurrogateOptions};
use super::model::{Architecture, ModelParams};
use super::params::ParamBlock;
use super::pretrain::classifier_loss_and_gradient;
use crate::env::{CostSchedule, MaskedSequence};
use crate::masking::{sample_mask, MaskSpec};
use crate::rng::SplitMix64;
use crate::synthgen::LabeledSequence;
use crate::{Error, Result};

/// Coordinates where both gradients are below this are not compared.
pub const NEGLIGIBLE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub block: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordinateCheck {
    pub fn relative_error(&self) -> Option<f64> {
        let scale = self.analytic.abs().max(self.numeric.abs());
        (scale >= NEGLIGIBLE).then(|| (self.analytic - self.numeric).abs() / scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.coordinates
            .iter()
            .filter_map(CoordinateCheck::relative_error)
            .fold(0.0, f64::max)
    }

    /// Number of coordinates that were actually compared.
    pub fn compared(&self) -> usize {
        self.coordinates.iter().filter(|c| c.relative_error().is_some()).count()
    }
}

type Blocks = &'static [&'static str];

fn block<'a>(params: &'a ModelParams, name: &str) -> &'a ParamBlock {
    match name {
        "classifier" => &params.classifier,
        "policy" => &params.policy,
        "baseline" => &params.baseline,
        _ => unreachable!(),
    }
}

fn block_mut<'a>(params: &'a mut ModelParams, name: &str) -> &'a mut ParamBlock {
    match name {
        "classifier" => &mut params.classifier,
        "policy" => &mut params.policy,
        "baseline" => &mut params.baseline,
        _ => unreachable!(),
    }
}

fn compare(
    params: &ModelParams,
    blocks: Blocks,
    analytic: &[Vec<f64>],
    n_coords: usize,
    eps: f64,
    rng: &mut SplitMix64,
    objective: impl Fn(&ModelParams) -> Result<f64>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Input(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let sizes: Vec<usize> = blocks.iter().map(|b| block(params, b).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut coordinates = Vec::with_capacity(n_coords);
    let mut probe = params.clone();
    for _ in 0..n_coords {
        let mut flat = rng.below(total as u64) as usize;
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let name = blocks[which];
        let original = block(params, name).data[flat];
        block_mut(&mut probe, name).data[flat] = original + eps;
        let up = objective(&probe)?;
        block_mut(&mut probe, name).data[flat] = original - eps;
        let down = objective(&probe)?;
        block_mut(&mut probe, name).data[flat] = original;
        coordinates.push(CoordinateCheck {
            block: name,
            index: flat,
            analytic: analytic[which][flat],
            numeric: (up - down) / (2.0 * eps),
        });
    }
    Ok(GradCheckReport { coordinates })
}

/// Parameters with every layer (including output layers) randomly set, so
/// that no gradient is trivially zero.
pub fn probe_params(arch: Architecture, seed: u64) -> ModelParams {
    let mut rng = SplitMix64::new(seed);
    let mut params = ModelParams::new(arch, &mut rng);
    for b in [&mut params.classifier, &mut params.policy, &mut params.baseline] {
        b.init(&mut rng, &[]);
        for v in b.data.iter_mut() {
            *v += 0.05 * rng.normal();
        }
    }
    params
}

/// Masked inputs for a classifier probe batch.
pub fn masked_inputs(params: &ModelParams, batch: &[&LabeledSequence], rng: &mut SplitMix64) -> Result<Array2<f64>> {
    let arch = &params.arch;
    let spec = MaskSpec::keep_only(arch.modalities());
    let views = batch
        .iter()
        .map(|s| MaskedSequence::from_actions(s, &sample_mask(&spec, arch.horizon, rng)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MaskedSequence> = views.iter().collect();
    arch.classifier_input(&refs)
}

/// Classifier negative log-likelihood on randomly masked probe inputs.
pub fn classifier_grad_check(
    params: &ModelParams,
    batch: &[&LabeledSequence],
    eps: f64,
    n_coords: usize,
    rng: &mut SplitMix64,
) -> Result<GradCheckReport> {
    let x = masked_inputs(params, batch, rng)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
    let (_, grad) = classifier_loss_and_gradient(params, x.clone(), &labels);
    compare(params, &["classifier"], &[grad], n_coords, eps, rng, |p| {
        Ok(classifier_loss_and_gradient(p, x.clone(), &labels).0)
    })
}

/// The relaxed Gumbel surrogate `mean(C(a) + L)` under frozen noise, over
/// the classifier and policy blocks jointly. Conditioned architectures are
/// rejected: their prediction features are detached inputs, so the backward
/// pass is deliberately not the full derivative.
pub fn gumbel_grad_check(
    params: &ModelParams,
    batch: &[&LabeledSequence],
    costs: &CostSchedule,
    tau: f64,
    eps: f64,
    n_coords: usize,
    rng: &mut SplitMix64,
) -> Result<GradCheckReport> {
    let arch = &params.arch;
    if arch.conditioning {
        return Err(Error::Config("surrogate gradient check needs an unconditioned policy".into()));
    }
    let noise = GumbelNoise::sample(arch.horizon, batch.len(), arch.modalities(), rng);
    let opts = SurrogateOptions {
        tau,
        straight_through: false,
    };
    let s = build_surrogate(params, batch, costs, &noise, opts)?;
    let grads = s.tape.backward(s.objective);
    let analytic = vec![
        params.classifier.gradient(&s.classifier, &grads),
        params.policy.gradient(&s.policy, &grads),
    ];
    compare(params, &["classifier", "policy"], &analytic, n_coords, eps, rng, |p| {
        let s = build_surrogate(p, batch, costs, &noise, opts)?;
        Ok(s.tape.scalar(s.objective))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSummary {
    pub classifier: GradCheckReport,
    pub gumbel: GradCheckReport,
}

impl GradCheckSummary {
    pub fn max_relative_error(&self) -> f64 {
        self.classifier
            .max_relative_error()
            .max(self.gumbel.max_relative_error())
    }
}

/// Both checks on the same probe batch.
pub fn grad_check(
    params: &ModelParams,
    batch: &[&LabeledSequence],
    costs: &CostSchedule,
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckSummary> {
    let mut rng = SplitMix64::new(seed);
    Ok(GradCheckSummary {
        classifier: classifier_grad_check(params, batch, eps, n_coords, &mut rng)?,
        gumbel: gumbel_grad_check(params, batch, costs, 1.0, eps, n_coords, &mut rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{draw_sequence, SyntheticConfig};

    #[test]
    fn step_size_is_validated() {
        let cfg = SyntheticConfig::default();
        let params = probe_params(Architecture::for_task(&cfg, 4, false), 1);
        let seq = draw_sequence(&cfg, &mut SplitMix64::new(0)).unwrap();
        let costs = CostSchedule::uniform(0.0005, 2).unwrap();
        assert!(grad_check(&params, &[&seq], &costs, 1e-2, 3, 0).is_err());
        assert!(grad_check(&params, &[&seq], &costs, 1e-8, 3, 0).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = SyntheticConfig::default();
        let mut rng = SplitMix64::new(11);
        let seqs: Vec<_> = (0..8).map(|_| draw_sequence(&cfg, &mut rng).unwrap()).collect();
        let batch: Vec<&LabeledSequence> = seqs.iter().collect();
        let costs = CostSchedule::uniform(0.05, 2).unwrap();
        let params = probe_params(Architecture::for_task(&cfg, 16, false), 5);
        let r = grad_check(&params, &batch, &costs, 1e-5, 100, 7).unwrap();
        assert!(r.classifier.compared() >= 20 && r.gumbel.compared() >= 20);
        assert!(r.max_relative_error() < 1e-4, "{}", r.max_relative_error());

        let conditioned = probe_params(Architecture::for_task(&cfg, 16, true), 5);
        assert!(grad_check(&conditioned, &batch, &costs, 1e-5, 10, 7).is_err());
    }

    #[test]
    fn negligible_pairs_are_skipped() {
        let c = CoordinateCheck { block: "policy", index: 0, analytic: 0.0, numeric: 1e-12 };
        assert_eq!(c.relative_error(), None);
        let c = CoordinateCheck { block: "policy", index: 0, analytic: 1.0, numeric: 1.0 + 1e-6 };
        assert!(c.relative_error().unwrap() < 1.1e-6);
    }
}
