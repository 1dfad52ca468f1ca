use std::sync::Arc;

use a2mt::env::{acquisition_cost, intermediate_reward, intermediate_terms, CostSchedule, Episode, MaskedSequence};
use a2mt::eval::{acquisition_pattern, confusion_vs_oracle, evaluate_policy, play_episodes};
use a2mt::learner::checkpoint::{load_params, save_params};
use a2mt::learner::gradcheck::probe_params;
use a2mt::learner::model::{classifier_forward, Architecture, ModelParams};
use a2mt::learner::{ActionSelection, LearnedPolicy};
use a2mt::masking::{sample_mask, MaskSpec};
use a2mt::policies::{random_1hot_schedule, OraclePolicy, RandomRatePolicy};
use a2mt::rng::SplitMix64;
use a2mt::synthgen::{draw_sequence, label_of, oracle_actions, LabeledSequence, SyntheticConfig};
use proptest::prelude::*;

fn task() -> impl Strategy<Value = SyntheticConfig> {
    (1usize..30, 0i32..4, 0i32..5, -3i32..3, 1i32..5).prop_map(|(length, dlo, dspan, clo, cspan)| SyntheticConfig {
        length,
        digit_low: dlo,
        digit_high: dlo + dspan,
        counter_low: clo,
        counter_high: clo + cspan,
        seed: 0,
    })
}

fn sequences(cfg: &SyntheticConfig, n: usize, seed: u64) -> Vec<LabeledSequence> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| draw_sequence(cfg, &mut rng).unwrap()).collect()
}

fn small_model(cfg: &SyntheticConfig, conditioning: bool, seed: u64) -> ModelParams {
    probe_params(Architecture::for_task(cfg, 8, conditioning), seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_label_matches_closed_form(cfg in task(), seed: u64) {
        for s in sequences(&cfg, 20, seed) {
            prop_assert_eq!(s.len(), cfg.length);
            prop_assert_eq!(label_of(&s.digits, &s.counter, cfg.counter_low).unwrap(), i64::from(s.label));
            prop_assert!((s.label as usize) < cfg.num_classes());
        }
    }

    #[test]
    fn oracle_policy_replays_oracle_schedule(cfg in task(), seed: u64) {
        let data = sequences(&cfg, 16, seed);
        let classifier = small_model(&cfg, false, seed);
        let costs = CostSchedule::uniform(0.01, 2).unwrap();
        let records = play_episodes(&mut OraclePolicy::new(cfg.counter_low), &classifier, &data, &costs, &mut SplitMix64::new(0)).unwrap();
        for (r, s) in records.iter().zip(&data) {
            prop_assert_eq!(&r.actions, &oracle_actions(&s.counter, cfg.counter_low).unwrap());
        }
    }

    #[test]
    fn metrics_are_well_formed(cfg in task(), seed: u64, d in 0.0f64..=1.0, c in 0.0f64..=1.0, cost in 0.0f64..0.1) {
        let data = sequences(&cfg, 24, seed);
        let classifier = small_model(&cfg, false, seed);
        let costs = CostSchedule::new(vec![cost, cost * 0.5]).unwrap();
        let mut policy = RandomRatePolicy::new(vec![d, c]).unwrap();
        let r = evaluate_policy(&mut policy, &classifier, &data, &costs, 2, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.mean.accuracy));
        for &rate in &r.mean.rates {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
        for run in &r.runs {
            prop_assert_eq!(run.reward, -run.cost - run.loss);
        }
        prop_assert!(r.mean.loss >= 0.0 && r.mean.cost >= 0.0);
    }

    #[test]
    fn confusion_and_pattern_cover_every_cell(cfg in task(), seed: u64, rate in 0.0f64..=1.0) {
        let data = sequences(&cfg, 12, seed);
        let classifier = small_model(&cfg, false, seed);
        let costs = CostSchedule::uniform(0.001, 2).unwrap();
        let records = play_episodes(&mut RandomRatePolicy::new(vec![rate, rate]).unwrap(), &classifier, &data, &costs, &mut SplitMix64::new(seed)).unwrap();
        let agent: Vec<_> = records.iter().map(|r| r.actions.clone()).collect();
        let oracle: Vec<_> = data.iter().map(|s| oracle_actions(&s.counter, cfg.counter_low).unwrap()).collect();
        for m in confusion_vs_oracle(&agent, &oracle).unwrap() {
            prop_assert_eq!(m.total(), (data.len() * cfg.length) as u64);
        }
        let pattern = acquisition_pattern(&agent).unwrap();
        prop_assert_eq!(pattern.len(), cfg.length);
        for row in pattern {
            for p in row {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    /// The policy's decision at `t` depends only on what was revealed before `t`.
    #[test]
    fn policy_ignores_unrevealed_and_future_truth(cfg in task(), seed: u64, t_frac in 0.0f64..1.0, conditioning: bool) {
        let params = Arc::new(small_model(&cfg, conditioning, seed));
        let policy = LearnedPolicy::new(params, ActionSelection::Sample);
        let mut rng = SplitMix64::new(seed);
        let a = draw_sequence(&cfg, &mut rng).unwrap();
        let mut b = draw_sequence(&cfg, &mut rng).unwrap();
        let t = ((t_frac * cfg.length as f64) as usize).min(cfg.length - 1);
        let prefix: Vec<Vec<bool>> = (0..t).map(|_| vec![rng.bernoulli(0.5), rng.bernoulli(0.5)]).collect();
        // Same truth where acquired before t; anything elsewhere.
        for (s, acts) in prefix.iter().enumerate() {
            if acts[0] { b.digits[s] = a.digits[s]; }
            if acts[1] { b.counter[s] = a.counter[s]; }
        }
        let costs = CostSchedule::uniform(0.01, 2).unwrap();
        let mut eps = vec![Episode::reset(a, costs.clone()), Episode::reset(b, costs)];
        for acts in &prefix {
            for e in eps.iter_mut() {
                e.step(acts).unwrap();
            }
        }
        let p = policy.probabilities(t, &eps).unwrap();
        prop_assert_eq!(p.row(0), p.row(1));
    }

    #[test]
    fn classifier_outputs_distributions(cfg in task(), seed: u64, conditioning: bool) {
        let params = small_model(&cfg, conditioning, seed);
        let mut rng = SplitMix64::new(seed);
        let views: Vec<MaskedSequence> = sequences(&cfg, 8, seed)
            .iter()
            .map(|s| MaskedSequence::from_actions(s, &sample_mask(&MaskSpec::full(2), cfg.length, &mut rng)).unwrap())
            .collect();
        let refs: Vec<&MaskedSequence> = views.iter().collect();
        let probs = classifier_forward(&params, &refs).unwrap();
        prop_assert_eq!(probs.ncols(), cfg.num_classes());
        for row in probs.rows() {
            prop_assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0 && *p <= 1.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_costs_add_up(cfg in task(), seed: u64, c0 in 0.0f64..1.0, c1 in 0.0f64..1.0, rate in 0.0f64..=1.0) {
        let costs = CostSchedule::new(vec![c0, c1]).unwrap();
        let mut rng = SplitMix64::new(seed);
        let mut e = Episode::reset(draw_sequence(&cfg, &mut rng).unwrap(), costs.clone());
        let mut sum = 0.0;
        while !e.is_done() {
            sum += e.step(&[rng.bernoulli(rate), rng.bernoulli(rate)]).unwrap();
        }
        prop_assert_eq!(sum, acquisition_cost(e.actions(), &costs).unwrap());
        prop_assert!(e.step(&[false, false]).is_err());
    }

    #[test]
    fn intermediate_terms_telescope(losses in prop::collection::vec(0.0f64..20.0, 2..40), alpha in 0.0f64..3.0) {
        let total = intermediate_reward(&losses, alpha, 1.0).unwrap();
        let want = -alpha * (losses[losses.len() - 1] - losses[0]);
        prop_assert!((total - want).abs() <= 1e-12 * want.abs().max(1e-300));
        let terms = intermediate_terms(&losses, alpha, 1.0);
        prop_assert_eq!(terms.len(), losses.len() - 1);
        let summed: f64 = terms.iter().sum();
        prop_assert!((summed - want).abs() <= 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn onehot_schedule_hits_target(horizon in 1usize..60, frac in 0.0f64..=1.0) {
        let target = frac * horizon as f64;
        let s = random_1hot_schedule(target, horizon).unwrap();
        prop_assert!((s.expected_count() - target).abs() <= 1e-12);
        prop_assert!(s.slots.iter().all(|&t| t < horizon));
        let mut seen = s.slots.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), s.slots.len());
    }

    #[test]
    fn masks_have_task_shape(horizon in 1usize..40, seed: u64, which in 0usize..4) {
        let spec = [MaskSpec::keep_only(2), MaskSpec::with_max_timestep(2), MaskSpec::full(2), MaskSpec::keep_all(2)][which].clone();
        let m = sample_mask(&spec, horizon, &mut SplitMix64::new(seed));
        prop_assert_eq!(m.horizon(), horizon);
        prop_assert_eq!(m.modalities(), 2);
        if which == 3 {
            prop_assert_eq!(m.count(0) + m.count(1), 2 * horizon);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn params_survive_checkpoint_round_trip(cfg in task(), seed: u64, conditioning: bool) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let params = small_model(&cfg, conditioning, seed);
        save_params(&path, &params).unwrap();
        let back = load_params(&path).unwrap();
        prop_assert_eq!(back.checksum(), params.checksum());
        prop_assert_eq!(back, params);
    }
}
