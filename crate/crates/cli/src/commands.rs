//! Subcommand pipelines. Each returns after writing its outputs and the
//! resolved configuration snapshot into `cfg.out`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use a2mt::dataset::{generate_dataset, generate_split, read_dataset};
use a2mt::env::{ActionMatrix, CostSchedule, MaskedSequence};
use a2mt::eval::{
    acquisition_pattern, confusion_vs_oracle, evaluate_policy, rate_non_increasing, run_cost_sweep, EvalReport,
    SweepOptions,
};
use a2mt::learner::checkpoint::{load_params, load_trainer, save_params, save_trainer};
use a2mt::learner::gradcheck::{grad_check, probe_params};
use a2mt::learner::model::{classifier_forward, Architecture, ModelParams};
use a2mt::learner::{pretrain_classifier, LearnedPolicy, MaskSource, Mode, TrainConfig, Trainer};
use a2mt::masking::sample_mask;
use a2mt::policies::{AlwaysPolicy, NeverPolicy, OraclePolicy, Policy, RandomOnehotPolicy, RandomRatePolicy};
use a2mt::rng::{derive_seed_tagged, SplitMix64};
use a2mt::synthgen::{oracle_actions, oracle_rates, LabeledSequence, SyntheticConfig};

use crate::config::{MaskKind, RunConfig};
use crate::report::{confusion_rows, pattern_rows, write_csv, MetricsRow, SweepCsvRow, TrainLogRow};

pub struct Data {
    pub task: SyntheticConfig,
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

/// Reads the configured dataset files, or generates both splits in memory.
/// A train file's header replaces the task section.
pub fn load_data(cfg: &mut RunConfig) -> Result<Data> {
    let train = match &cfg.data.train {
        Some(path) => {
            let ds = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.task = ds.header.config.clone();
            cfg.task.seed = cfg.seed;
            ds.sequences
        }
        None => generate_split(&cfg.task, "train", cfg.data.n_train, cfg.seed)?.sequences,
    };
    let test = match &cfg.data.test {
        Some(path) => {
            let ds = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
            if ds.header.config.length != cfg.task.length || ds.header.config.value_ranges() != cfg.task.value_ranges() {
                bail!("{} was generated for a different task than the training data", path.display());
            }
            ds.sequences
        }
        None => generate_split(&cfg.task, "test", cfg.data.n_test, cfg.seed)?.sequences,
    };
    if train.is_empty() || test.is_empty() {
        bail!("training and test sets must be non-empty");
    }
    Ok(Data {
        task: cfg.task.clone(),
        train,
        test,
    })
}

pub fn gen(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = generate_dataset(&cfg.out, &cfg.task, cfg.data.n_train, cfg.data.n_test, cfg.seed)?;
    cfg.write_snapshot()?;
    println!("wrote {} ({} sequences)", train.display(), cfg.data.n_train);
    println!("wrote {} ({} sequences)", test.display(), cfg.data.n_test);
    Ok((train, test))
}

#[derive(Debug, serde::Serialize)]
struct OracleRow {
    source: String,
    n: usize,
    digit_rate: f64,
    counter_rate: f64,
}

/// Oracle acquisition rates of a dataset file or of fresh samples.
pub fn oracle(cfg: &mut RunConfig, dataset: Option<PathBuf>, n: usize) -> Result<(f64, f64)> {
    let row = match dataset {
        Some(path) => {
            let ds = read_dataset(&path)?;
            cfg.task = ds.header.config.clone();
            cfg.task.seed = cfg.seed;
            let low = ds.header.config.counter_low;
            let (mut digit, mut counter) = (0usize, 0usize);
            for s in &ds.sequences {
                let a = oracle_actions(&s.counter, low)?;
                digit += a.count(a2mt::DIGIT);
                counter += a.count(a2mt::COUNTER);
            }
            let cells = (ds.sequences.len() * ds.header.config.length) as f64;
            OracleRow {
                source: path.display().to_string(),
                n: ds.sequences.len(),
                digit_rate: digit as f64 / cells,
                counter_rate: counter as f64 / cells,
            }
        }
        None => {
            let r = oracle_rates(&cfg.task, n, cfg.seed)?;
            OracleRow {
                source: "samples".into(),
                n,
                digit_rate: r.digit,
                counter_rate: r.counter,
            }
        }
    };
    cfg.write_snapshot()?;
    println!("digit_rate {:.4} counter_rate {:.4} (n = {})", row.digit_rate, row.counter_rate, row.n);
    write_csv(&cfg.out.join("oracle.csv"), std::slice::from_ref(&row))?;
    Ok((row.digit_rate, row.counter_rate))
}

fn mask_source(cfg: &RunConfig, kind: MaskKind) -> MaskSource {
    match kind {
        MaskKind::Random => MaskSource::Random(cfg.pretrain.mask.clone()),
        MaskKind::Oracle => MaskSource::Oracle {
            counter_low: cfg.task.counter_low,
        },
    }
}

/// Fresh parameters with a classifier pretrained on `kind` masks.
pub fn pretrained_params(cfg: &RunConfig, data: &Data, kind: MaskKind, conditioning: bool) -> Result<ModelParams> {
    let arch = Architecture::for_task(&data.task, cfg.pretrain.hidden, conditioning);
    let mut params = ModelParams::new(arch, &mut SplitMix64::new(derive_seed_tagged(cfg.seed, "init", 0)));
    let t0 = Instant::now();
    let report = pretrain_classifier(
        &mut params,
        &data.train,
        &mask_source(cfg, kind),
        &cfg.pretrain.core(cfg.seed),
        cfg.pretrain.steps.div_ceil(8).max(1),
        |step, loss| eprintln!("pretrain step {step:>6} loss {loss:.4} ({:.0}s)", t0.elapsed().as_secs_f64()),
    )?;
    eprintln!(
        "pretrain probe loss {:.4} -> {:.4}",
        report.initial_loss, report.final_loss
    );
    Ok(params)
}

/// Test accuracy of the classifier under masks of `kind`.
pub fn masked_accuracy(cfg: &RunConfig, params: &ModelParams, test: &[LabeledSequence], kind: MaskKind) -> Result<f64> {
    let mut rng = SplitMix64::new(derive_seed_tagged(cfg.seed, "masked-accuracy", 0));
    let arch = &params.arch;
    let mut correct = 0usize;
    for chunk in test.chunks(1024) {
        let views = chunk
            .iter()
            .map(|s| {
                let mask = match kind {
                    MaskKind::Random => sample_mask(&cfg.pretrain.mask, arch.horizon, &mut rng),
                    MaskKind::Oracle => oracle_actions(&s.counter, cfg.task.counter_low)?,
                };
                Ok(MaskedSequence::from_actions(s, &mask)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&MaskedSequence> = views.iter().collect();
        let probs = classifier_forward(params, &refs)?;
        for (s, row) in chunk.iter().zip(probs.rows()) {
            correct += usize::from(a2mt::eval::argmax(row.as_slice().expect("row")) == s.label as usize);
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

pub fn pretrain(cfg: &mut RunConfig) -> Result<ModelParams> {
    let data = load_data(cfg)?;
    let params = pretrained_params(cfg, &data, cfg.pretrain.masks, cfg.train.conditioning)?;
    let acc = masked_accuracy(cfg, &params, &data.test, cfg.pretrain.masks)?;
    cfg.write_snapshot()?;
    let path = cfg.out.join("classifier.json");
    save_params(&path, &params)?;
    println!("test accuracy under {:?} masks {acc:.4}", cfg.pretrain.masks);
    println!("checksum {}", params.checksum());
    println!("wrote {}", path.display());
    Ok(params)
}

/// Starting parameters for a training run of `config`.
pub fn initial_trainer(cfg: &RunConfig, data: &Data, config: TrainConfig) -> Result<Trainer> {
    match config.mode {
        Mode::GumbelJoint => Ok(Trainer::new(
            Architecture::for_task(&data.task, config.hidden, config.conditioning),
            config,
        )?),
        Mode::A2c => {
            let params = match &cfg.pretrain.classifier {
                Some(path) => load_params(path)?,
                None => pretrained_params(cfg, data, MaskKind::Random, config.conditioning)?,
            };
            if params.arch.conditioning != config.conditioning {
                bail!("pretrained parameters disagree with train.conditioning");
            }
            Ok(Trainer::from_params(params, config)?)
        }
    }
}

pub fn train_with_log(trainer: &mut Trainer, data: &[LabeledSequence], log_every: usize) -> Result<Vec<TrainLogRow>> {
    let t0 = Instant::now();
    let history = trainer.run(data, log_every, |s| {
        eprintln!(
            "step {:>6} reward {:.4} cost {:.5} loss {:.4} rates {:.3}/{:.3} ({:.0}s)",
            s.step,
            s.reward,
            s.cost,
            s.loss,
            s.rates[a2mt::DIGIT],
            s.rates[a2mt::COUNTER],
            t0.elapsed().as_secs_f64()
        )
    })?;
    Ok(history.iter().map(TrainLogRow::from).collect())
}

pub fn train(cfg: &mut RunConfig, log_every: usize) -> Result<Trainer> {
    let data = load_data(cfg)?;
    let mut trainer = initial_trainer(cfg, &data, cfg.train.clone())?;
    let log = train_with_log(&mut trainer, &data.train, log_every)?;
    cfg.write_snapshot()?;
    write_csv(&cfg.out.join("train_log.csv"), &log)?;
    let path = cfg.out.join("checkpoint.json");
    save_trainer(&path, &trainer)?;
    let params = Arc::new(trainer.params.clone());
    let mut agent = LearnedPolicy::new(params.clone(), cfg.eval.selection).named("agent");
    let r = evaluate_policy(&mut agent, &params, &data.test, &trainer.config.cost_schedule()?, 1, cfg.seed)?;
    println!(
        "test accuracy {:.4} digit_rate {:.4} counter_rate {:.4} reward {:.5}",
        r.mean.accuracy, r.mean.rates[a2mt::DIGIT], r.mean.rates[a2mt::COUNTER], r.mean.reward
    );
    println!("checksum {}", trainer.params.checksum());
    println!("wrote {}", path.display());
    Ok(trainer)
}

fn checkpoint_params(cfg: &RunConfig) -> Result<Arc<ModelParams>> {
    let path = cfg
        .eval
        .checkpoint
        .as_ref()
        .context("no checkpoint given (use --checkpoint or eval.checkpoint)")?;
    Ok(Arc::new(load_trainer(path)?.params))
}

/// The agent, its rate-matched ablations, the scripted baselines and the
/// oracle (scored by a classifier trained on oracle masks).
pub struct Table {
    pub rows: Vec<EvalReport>,
    pub oracle_actions: Vec<ActionMatrix>,
}

pub fn table(cfg: &RunConfig, data: &Data, params: &Arc<ModelParams>, include_fixed: bool) -> Result<Table> {
    let costs = CostSchedule::new(cfg.train.costs.clone())?;
    let repeats = cfg.eval.repeats;
    let seed = cfg.seed;
    let mut agent = LearnedPolicy::new(params.clone(), cfg.eval.selection).named("agent");
    let agent_report = evaluate_policy(&mut agent, params, &data.test, &costs, repeats, seed)?;
    let rates = agent_report.mean.rates.clone();
    let mut policies: Vec<Box<dyn Policy>> = vec![
        Box::new(RandomRatePolicy::new(rates.clone())?),
        Box::new(RandomOnehotPolicy::from_rates(&rates, data.task.length)?),
    ];
    if include_fixed {
        policies.push(Box::new(NeverPolicy::default()));
        policies.push(Box::new(AlwaysPolicy));
    }
    let mut rows = vec![agent_report];
    for p in policies.iter_mut() {
        rows.push(evaluate_policy(p.as_mut(), params, &data.test, &costs, repeats, seed)?);
    }
    let oracle_params = pretrained_params(cfg, data, MaskKind::Oracle, false)?;
    let mut oracle = OraclePolicy::new(data.task.counter_low);
    let oracle_report = evaluate_policy(&mut oracle, &oracle_params, &data.test, &costs, 1, seed)?;
    let oracle_actions = oracle_report.actions.clone();
    rows.insert(0, oracle_report);
    Ok(Table { rows, oracle_actions })
}

pub fn eval(cfg: &mut RunConfig) -> Result<Table> {
    let params = checkpoint_params(cfg)?;
    let data = load_data(cfg)?;
    let t = table(cfg, &data, &params, true)?;
    cfg.write_snapshot()?;
    let rows: Vec<MetricsRow> = t.rows.iter().map(MetricsRow::from).collect();
    for r in &rows {
        println!(
            "{:<12} accuracy {:.4} digit_rate {:.4} counter_rate {:.4} reward {:.5} ± {:.5}",
            r.policy, r.accuracy, r.digit_rate, r.counter_rate, r.reward, r.reward_std
        );
    }
    write_csv(&cfg.out.join("table1.csv"), &rows)?;
    let agent = t.rows.iter().find(|r| r.policy == "agent").expect("agent row");
    let cm = confusion_vs_oracle(&agent.actions, &t.oracle_actions)?;
    write_csv(&cfg.out.join("confusion.csv"), &confusion_rows(&cm))?;
    write_patterns(cfg, &t)?;
    Ok(t)
}

fn write_patterns(cfg: &RunConfig, t: &Table) -> Result<()> {
    let mut rows = Vec::new();
    for r in &t.rows {
        rows.extend(pattern_rows(&r.policy, &acquisition_pattern(&r.actions)?));
    }
    write_csv(&cfg.out.join("pattern.csv"), &rows)
}

pub fn pattern(cfg: &mut RunConfig) -> Result<Table> {
    let params = checkpoint_params(cfg)?;
    let data = load_data(cfg)?;
    let t = table(cfg, &data, &params, false)?;
    cfg.write_snapshot()?;
    write_patterns(cfg, &t)?;
    println!("wrote {}", cfg.out.join("pattern.csv").display());
    Ok(t)
}

pub fn sweep(cfg: &mut RunConfig) -> Result<Vec<a2mt::eval::SweepRow>> {
    let data = load_data(cfg)?;
    let mut base = cfg.train.clone();
    base.mode = cfg.sweep.mode;
    base.steps = cfg.sweep.steps;
    base.conditioning = cfg.sweep.conditioning;
    // One pretrained classifier serves every cost.
    let shared = match (base.mode, &cfg.pretrain.classifier) {
        (Mode::A2c, Some(path)) => Some(load_params(path)?),
        (Mode::A2c, None) => Some(pretrained_params(cfg, &data, MaskKind::Random, base.conditioning)?),
        (Mode::GumbelJoint, _) => None,
    };
    let opts = SweepOptions {
        repeats: cfg.eval.repeats,
        seed: cfg.seed,
        selection: cfg.eval.selection,
    };
    let rows = run_cost_sweep(&cfg.sweep.costs, a2mt::NUM_MODALITIES, &data.test, opts, |cost| {
        let config = TrainConfig {
            costs: vec![cost; a2mt::NUM_MODALITIES],
            ..base.clone()
        };
        let mut trainer = match &shared {
            Some(p) => Trainer::from_params(p.clone(), config)?,
            None => Trainer::new(Architecture::for_task(&data.task, config.hidden, config.conditioning), config)?,
        };
        eprintln!("training at cost {cost}");
        train_with_log(&mut trainer, &data.train, (base.steps / 4).max(1)).map_err(|e| a2mt::Error::Training {
            step: trainer.step,
            detail: format!("{e:#}"),
        })?;
        Ok(Arc::new(trainer.params))
    })?;
    cfg.write_snapshot()?;
    let csv: Vec<SweepCsvRow> = rows.iter().map(SweepCsvRow::from).collect();
    for r in &csv {
        match (&r.agent_rate, r.error.is_empty()) {
            (Some(rate), true) => println!(
                "cost {:<8} agent rate {:.3} reward {:.5} | random-rate {:.5} | random-1hot {:.5}",
                r.cost,
                rate,
                r.agent_reward.unwrap_or(f64::NAN),
                r.random_rate_reward.unwrap_or(f64::NAN),
                r.random_1hot_reward.unwrap_or(f64::NAN)
            ),
            _ => println!("cost {:<8} failed: {}", r.cost, r.error),
        }
    }
    println!("rate non-increasing in cost: {}", rate_non_increasing(&rows));
    write_csv(&cfg.out.join("sweep.csv"), &csv)?;
    Ok(rows)
}

pub fn gradcheck(cfg: &RunConfig) -> Result<f64> {
    let g = &cfg.gradcheck;
    let arch = Architecture::for_task(&cfg.task, g.hidden, false);
    let params = probe_params(arch, derive_seed_tagged(cfg.seed, "gradcheck-params", 0));
    let probe = generate_split(&cfg.task, "gradcheck", g.probe.max(1), cfg.seed)?.sequences;
    let batch: Vec<&LabeledSequence> = probe.iter().collect();
    let costs = CostSchedule::new(cfg.train.costs.clone())?;
    let report = grad_check(&params, &batch, &costs, g.eps, g.coords, cfg.seed)?;
    cfg.write_snapshot()?;
    let max = report.max_relative_error();
    println!(
        "classifier max relative error {:.3e} ({} of {} coordinates compared)",
        report.classifier.max_relative_error(),
        report.classifier.compared(),
        report.classifier.coordinates.len()
    );
    println!(
        "surrogate  max relative error {:.3e} ({} of {} coordinates compared)",
        report.gumbel.max_relative_error(),
        report.gumbel.compared(),
        report.gumbel.coordinates.len()
    );
    println!("max relative error {max:.3e}");
    if !(max < g.tolerance) {
        bail!("gradient check failed: {max:.3e} >= {:.0e}", g.tolerance);
    }
    Ok(max)
}
