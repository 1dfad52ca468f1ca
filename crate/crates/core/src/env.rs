//! The acquisition POMDP.
//!
//! An [`Episode`] walks a [`LabeledSequence`] one timestep at a time. At each
//! step the caller submits one binary decision per modality; acquired cells
//! become visible in the masked view and their cost is charged. After the
//! last step the episode is finalised against the classifier's prediction.
//!
//! Timesteps are 0-based throughout the API (`t = 0` is the first step).

use serde::{Deserialize, Serialize};

use crate::synthgen::LabeledSequence;
use crate::{Error, Result};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// One binary decision per modality for a single timestep.
pub type ActionVector = Vec<bool>;

/// Binary acquisition decisions for every (timestep, modality) cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMatrix {
    horizon: usize,
    modalities: usize,
    bits: Vec<bool>,
}

impl ActionMatrix {
    pub fn zeros(horizon: usize, modalities: usize) -> Self {
        Self {
            horizon,
            modalities,
            bits: vec![false; horizon * modalities],
        }
    }

    pub fn ones(horizon: usize, modalities: usize) -> Self {
        Self {
            horizon,
            modalities,
            bits: vec![true; horizon * modalities],
        }
    }

    pub fn from_rows(rows: &[ActionVector]) -> Result<Self> {
        let modalities = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != modalities) {
            return Err(Error::Input("ragged action rows".into()));
        }
        Ok(Self {
            horizon: rows.len(),
            modalities,
            bits: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    #[inline]
    pub fn get(&self, t: usize, m: usize) -> bool {
        self.bits[t * self.modalities + m]
    }

    #[inline]
    pub fn set(&mut self, t: usize, m: usize, value: bool) {
        self.bits[t * self.modalities + m] = value;
    }

    pub fn row(&self, t: usize) -> &[bool] {
        &self.bits[t * self.modalities..(t + 1) * self.modalities]
    }

    pub fn column(&self, m: usize) -> Vec<bool> {
        (0..self.horizon).map(|t| self.get(t, m)).collect()
    }

    /// Number of acquisitions of modality `m`.
    pub fn count(&self, m: usize) -> usize {
        (0..self.horizon).filter(|&t| self.get(t, m)).count()
    }

    /// Fraction of timesteps at which modality `m` was acquired.
    pub fn rate(&self, m: usize) -> f64 {
        self.count(m) as f64 / self.horizon as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Observed(i32),
    Missing,
}

/// The agent's and classifier's view of a sequence: observed or missing per cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSequence {
    horizon: usize,
    modalities: usize,
    cells: Vec<Cell>,
}

impl MaskedSequence {
    pub fn missing(horizon: usize, modalities: usize) -> Self {
        Self {
            horizon,
            modalities,
            cells: vec![Cell::Missing; horizon * modalities],
        }
    }

    /// Reveals exactly the cells selected by `actions`.
    pub fn from_actions(truth: &LabeledSequence, actions: &ActionMatrix) -> Result<Self> {
        if actions.horizon() != truth.len() {
            return Err(Error::Input(format!(
                "action horizon {} does not match sequence length {}",
                actions.horizon(),
                truth.len()
            )));
        }
        let mut view = Self::missing(actions.horizon(), actions.modalities());
        for t in 0..actions.horizon() {
            for m in 0..actions.modalities() {
                if actions.get(t, m) {
                    view.reveal(t, m, truth.value(t, m));
                }
            }
        }
        Ok(view)
    }

    /// Keeps only the first `steps` timesteps; later cells become missing.
    pub fn prefix(&self, steps: usize) -> Self {
        let mut out = self.clone();
        for cell in out.cells.iter_mut().skip(steps * self.modalities) {
            *cell = Cell::Missing;
        }
        out
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    #[inline]
    pub fn get(&self, t: usize, m: usize) -> Cell {
        self.cells[t * self.modalities + m]
    }

    #[inline]
    pub fn reveal(&mut self, t: usize, m: usize, value: i32) {
        self.cells[t * self.modalities + m] = Cell::Observed(value);
    }

    pub fn observed(&self, t: usize, m: usize) -> Option<i32> {
        match self.get(t, m) {
            Cell::Observed(v) => Some(v),
            Cell::Missing => None,
        }
    }

    pub fn observed_count(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, Cell::Observed(_))).count()
    }
}

/// Per-modality acquisition costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule(Vec<f64>);

impl CostSchedule {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if let Some(c) = costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Config(format!("acquisition costs must be finite and non-negative (got {c})")));
        }
        Ok(Self(costs))
    }

    /// The same cost for every modality.
    pub fn uniform(cost: f64, modalities: usize) -> Result<Self> {
        Self::new(vec![cost; modalities])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn modalities(&self) -> usize {
        self.0.len()
    }

    /// Cost of one timestep's decisions, summed in modality order.
    pub fn step_cost(&self, action: &[bool]) -> f64 {
        let mut total = 0.0;
        for (c, &a) in self.0.iter().zip(action) {
            if a {
                total += c;
            }
        }
        total
    }
}

/// Total acquisition cost `C(a)`, summed by ascending timestep then modality.
pub fn acquisition_cost(actions: &ActionMatrix, costs: &CostSchedule) -> Result<f64> {
    if actions.modalities() != costs.modalities() {
        return Err(Error::Input(format!(
            "actions have {} modalities but costs have {}",
            actions.modalities(),
            costs.modalities()
        )));
    }
    let mut total = 0.0;
    for t in 0..actions.horizon() {
        total += costs.step_cost(actions.row(t));
    }
    Ok(total)
}

/// Categorical negative log-likelihood of `label` with the probability floored.
pub fn nll(predicted: &[f64], label: usize) -> f64 {
    -predicted[label].max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub acquisition_cost: f64,
    pub terminal_loss: f64,
    pub intermediate: f64,
    pub total: f64,
}

/// A single running episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    truth: LabeledSequence,
    costs: CostSchedule,
    t: usize,
    actions: ActionMatrix,
    view: MaskedSequence,
    cost: f64,
}

impl Episode {
    pub fn reset(truth: LabeledSequence, costs: CostSchedule) -> Self {
        let horizon = truth.len();
        let modalities = costs.modalities();
        Self {
            truth,
            costs,
            t: 0,
            actions: ActionMatrix::zeros(horizon, modalities),
            view: MaskedSequence::missing(horizon, modalities),
            cost: 0.0,
        }
    }

    /// Applies the decisions for the current timestep and returns its cost.
    pub fn step(&mut self, action: &[bool]) -> Result<f64> {
        if self.is_done() {
            return Err(Error::EpisodeComplete {
                t: self.t,
                horizon: self.horizon(),
            });
        }
        if action.len() != self.costs.modalities() {
            return Err(Error::Input(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.costs.modalities()
            )));
        }
        let t = self.t;
        for (m, &a) in action.iter().enumerate() {
            if a {
                self.actions.set(t, m, true);
                self.view.reveal(t, m, self.truth.value(t, m));
            }
        }
        let step_cost = self.costs.step_cost(action);
        self.cost += step_cost;
        self.t += 1;
        Ok(step_cost)
    }

    /// Closes the episode against a predicted label distribution, with the
    /// intermediate reward switched off.
    pub fn finalize(&self, predicted: &[f64], label: usize) -> Result<RewardBreakdown> {
        self.finalize_with_intermediate(predicted, label, 0.0)
    }

    pub fn finalize_with_intermediate(
        &self,
        predicted: &[f64],
        label: usize,
        intermediate: f64,
    ) -> Result<RewardBreakdown> {
        if !self.is_done() {
            return Err(Error::IncompleteEpisode {
                t: self.t,
                horizon: self.horizon(),
            });
        }
        validate_distribution(predicted)?;
        if label >= predicted.len() {
            return Err(Error::Input(format!(
                "label {label} outside a {}-class distribution",
                predicted.len()
            )));
        }
        let terminal_loss = nll(predicted, label);
        Ok(RewardBreakdown {
            acquisition_cost: self.cost,
            terminal_loss,
            intermediate,
            total: -self.cost - terminal_loss + intermediate,
        })
    }

    pub fn horizon(&self) -> usize {
        self.truth.len()
    }

    /// Index of the next timestep to be decided; equals the horizon once done.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.horizon()
    }

    pub fn view(&self) -> &MaskedSequence {
        &self.view
    }

    pub fn actions(&self) -> &ActionMatrix {
        &self.actions
    }

    pub fn accumulated_cost(&self) -> f64 {
        self.cost
    }

    pub fn truth(&self) -> &LabeledSequence {
        &self.truth
    }

    pub fn costs(&self) -> &CostSchedule {
        &self.costs
    }
}

fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Input("predicted distribution has invalid entries".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("predicted distribution sums to {sum}")));
    }
    Ok(())
}

/// Shaping reward `-alpha * sum_{t=1..T} (L_t - gamma * L_{t-1})`.
///
/// `losses[0]` is the loss on the fully-missing input and `losses[t]` the loss
/// after `t` steps. The sum is accumulated in double-double arithmetic so the
/// `gamma = 1` telescoping identity holds to the last bit or two.
pub fn intermediate_reward(losses: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
    if losses.len() < 2 {
        return Err(Error::Input(format!(
            "need at least two losses (L_0 and L_1), got {}",
            losses.len()
        )));
    }
    let mut acc = DoubleDouble::ZERO;
    for w in losses.windows(2) {
        acc = acc.add_f64(w[1]);
        acc = acc.add_product(-gamma, w[0]);
    }
    Ok(-alpha * acc.value())
}

/// Per-step shaping terms `-alpha * (L_t - gamma * L_{t-1})`, `t = 1..T`.
pub fn intermediate_terms(losses: &[f64], alpha: f64, gamma: f64) -> Vec<f64> {
    losses
        .windows(2)
        .map(|w| -alpha * (w[1] - gamma * w[0]))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn add_f64(self, x: f64) -> Self {
        let (s, e) = Self::two_sum(self.hi, x);
        let (hi, lo) = Self::two_sum(s, e + self.lo);
        Self { hi, lo }
    }

    fn add_product(self, a: f64, b: f64) -> Self {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add_f64(p).add_f64(err)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}
