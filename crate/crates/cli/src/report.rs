//! CSV outputs, one file per table.

use std::path::Path;

use anyhow::{Context, Result};
use a2mt::eval::{ConfusionMatrix, EvalReport, SweepRow};
use a2mt::learner::StepStats;
use serde::Serialize;

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `table1.csv`: one row per policy.
#[derive(Debug, Serialize)]
pub struct MetricsRow {
    pub policy: String,
    pub n: usize,
    pub repeats: usize,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub digit_rate: f64,
    pub digit_rate_std: f64,
    pub counter_rate: f64,
    pub counter_rate_std: f64,
    pub reward: f64,
    pub reward_std: f64,
    pub cost: f64,
    pub loss: f64,
    pub entropy: f64,
}

impl From<&EvalReport> for MetricsRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            policy: r.policy.clone(),
            n: r.mean.n,
            repeats: r.std.n,
            accuracy: r.mean.accuracy,
            accuracy_std: r.std.accuracy,
            digit_rate: r.mean.rates[a2mt::DIGIT],
            digit_rate_std: r.std.rates[a2mt::DIGIT],
            counter_rate: r.mean.rates[a2mt::COUNTER],
            counter_rate_std: r.std.rates[a2mt::COUNTER],
            reward: r.mean.reward,
            reward_std: r.std.reward,
            cost: r.mean.cost,
            loss: r.mean.loss,
            entropy: r.mean.entropy,
        }
    }
}

/// `confusion.csv`: agent against oracle, one row per modality.
#[derive(Debug, Serialize)]
pub struct ConfusionRow {
    pub modality: &'static str,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub tp_rate: f64,
    pub tn_rate: f64,
}

pub fn modality_name(m: usize) -> &'static str {
    match m {
        a2mt::DIGIT => "digit",
        a2mt::COUNTER => "counter",
        _ => "other",
    }
}

pub fn confusion_rows(cm: &[ConfusionMatrix]) -> Vec<ConfusionRow> {
    cm.iter()
        .enumerate()
        .map(|(m, c)| ConfusionRow {
            modality: modality_name(m),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            tp_rate: c.tp_rate(),
            tn_rate: c.tn_rate(),
        })
        .collect()
}

/// `pattern.csv`: long format, one row per (policy, timestep, modality).
#[derive(Debug, Serialize)]
pub struct PatternRow {
    pub policy: String,
    pub t: usize,
    pub modality: &'static str,
    pub rate: f64,
}

pub fn pattern_rows(policy: &str, pattern: &[Vec<f64>]) -> Vec<PatternRow> {
    let mut out = Vec::new();
    for (t, row) in pattern.iter().enumerate() {
        for (m, &rate) in row.iter().enumerate() {
            out.push(PatternRow {
                policy: policy.to_string(),
                t,
                modality: modality_name(m),
                rate,
            });
        }
    }
    out
}

/// `sweep.csv`: one row per cost.
#[derive(Debug, Serialize)]
pub struct SweepCsvRow {
    pub cost: f64,
    pub agent_rate: Option<f64>,
    pub agent_digit_rate: Option<f64>,
    pub agent_counter_rate: Option<f64>,
    pub agent_accuracy: Option<f64>,
    pub agent_accuracy_std: Option<f64>,
    pub agent_reward: Option<f64>,
    pub agent_reward_std: Option<f64>,
    pub random_rate_accuracy: Option<f64>,
    pub random_rate_accuracy_std: Option<f64>,
    pub random_rate_reward: Option<f64>,
    pub random_rate_reward_std: Option<f64>,
    pub random_1hot_accuracy: Option<f64>,
    pub random_1hot_accuracy_std: Option<f64>,
    pub random_1hot_reward: Option<f64>,
    pub random_1hot_reward_std: Option<f64>,
    pub error: String,
}

impl From<&SweepRow> for SweepCsvRow {
    fn from(r: &SweepRow) -> Self {
        let pick = |e: &Option<EvalReport>, f: fn(&EvalReport) -> f64| e.as_ref().map(f);
        Self {
            cost: r.cost,
            agent_rate: r.agent_rate(),
            agent_digit_rate: pick(&r.agent, |e| e.mean.rates[a2mt::DIGIT]),
            agent_counter_rate: pick(&r.agent, |e| e.mean.rates[a2mt::COUNTER]),
            agent_accuracy: pick(&r.agent, |e| e.mean.accuracy),
            agent_accuracy_std: pick(&r.agent, |e| e.std.accuracy),
            agent_reward: pick(&r.agent, |e| e.mean.reward),
            agent_reward_std: pick(&r.agent, |e| e.std.reward),
            random_rate_accuracy: pick(&r.random_rate, |e| e.mean.accuracy),
            random_rate_accuracy_std: pick(&r.random_rate, |e| e.std.accuracy),
            random_rate_reward: pick(&r.random_rate, |e| e.mean.reward),
            random_rate_reward_std: pick(&r.random_rate, |e| e.std.reward),
            random_1hot_accuracy: pick(&r.random_1hot, |e| e.mean.accuracy),
            random_1hot_accuracy_std: pick(&r.random_1hot, |e| e.std.accuracy),
            random_1hot_reward: pick(&r.random_1hot, |e| e.mean.reward),
            random_1hot_reward_std: pick(&r.random_1hot, |e| e.std.reward),
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

/// `train_log.csv`.
#[derive(Debug, Serialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub reward: f64,
    pub cost: f64,
    pub loss: f64,
    pub digit_rate: f64,
    pub counter_rate: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

impl From<&StepStats> for TrainLogRow {
    fn from(s: &StepStats) -> Self {
        Self {
            step: s.step,
            reward: s.reward,
            cost: s.cost,
            loss: s.loss,
            digit_rate: s.rates[a2mt::DIGIT],
            counter_rate: s.rates[a2mt::COUNTER],
            grad_norm: s.grad_norm,
            learning_rate: s.learning_rate,
        }
    }
}
