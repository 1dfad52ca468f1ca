//! Scripted acquisition policies.
//!
//! All policies act on a batch of episodes at once through [`Policy`], so
//! learned and scripted policies share the evaluation loop.

use crate::env::{ActionMatrix, ActionVector, CostSchedule, Episode, MaskedSequence};
use crate::rng::SplitMix64;
use crate::{Error, Result, COUNTER, DIGIT, NUM_MODALITIES};

pub trait Policy {
    fn name(&self) -> String;

    /// Prepares per-episode state for a new batch of `batch` episodes.
    fn reset(&mut self, batch: usize);

    /// Decisions for timestep `t` of every episode in the batch.
    fn act(&mut self, t: usize, episodes: &[Episode], rng: &mut SplitMix64) -> Result<Vec<ActionVector>>;
}

/// Never acquires anything.
#[derive(Debug, Clone, Default)]
pub struct NeverPolicy {
    pub modalities: usize,
}

impl Policy for NeverPolicy {
    fn name(&self) -> String {
        "never".into()
    }

    fn reset(&mut self, _batch: usize) {}

    fn act(&mut self, _t: usize, episodes: &[Episode], _rng: &mut SplitMix64) -> Result<Vec<ActionVector>> {
        Ok(episodes.iter().map(|e| vec![false; e.costs().modalities()]).collect())
    }
}

/// Acquires every cell.
#[derive(Debug, Clone, Default)]
pub struct AlwaysPolicy;

impl Policy for AlwaysPolicy {
    fn name(&self) -> String {
        "always".into()
    }

    fn reset(&mut self, _batch: usize) {}

    fn act(&mut self, _t: usize, episodes: &[Episode], _rng: &mut SplitMix64) -> Result<Vec<ActionVector>> {
        Ok(episodes.iter().map(|e| vec![true; e.costs().modalities()]).collect())
    }
}

/// Independent Bernoulli draws per cell.
pub fn random_rate_actions(rates: &[f64], horizon: usize, rng: &mut SplitMix64) -> Result<ActionMatrix> {
    check_rates(rates)?;
    let mut a = ActionMatrix::zeros(horizon, rates.len());
    for t in 0..horizon {
        for (m, &p) in rates.iter().enumerate() {
            a.set(t, m, rng.bernoulli(p));
        }
    }
    Ok(a)
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Input(format!("rates must lie in [0, 1], got {rates:?}")));
    }
    Ok(())
}

/// Acquires each cell with a fixed per-modality probability.
#[derive(Debug, Clone)]
pub struct RandomRatePolicy {
    rates: Vec<f64>,
}

impl RandomRatePolicy {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        check_rates(&rates)?;
        Ok(Self { rates })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn expected_cost(&self, horizon: usize, costs: &CostSchedule) -> f64 {
        costs
            .as_slice()
            .iter()
            .zip(&self.rates)
            .map(|(c, r)| c * r * horizon as f64)
            .sum()
    }
}

impl Policy for RandomRatePolicy {
    fn name(&self) -> String {
        "random-rate".into()
    }

    fn reset(&mut self, _batch: usize) {}

    fn act(&mut self, _t: usize, episodes: &[Episode], rng: &mut SplitMix64) -> Result<Vec<ActionVector>> {
        Ok(episodes
            .iter()
            .map(|_| self.rates.iter().map(|&p| rng.bernoulli(p)).collect())
            .collect())
    }
}

/// Equidistant acquisition slots for one modality.
///
/// `slots` holds 0-based timesteps; `probs[i]` is the acquisition
/// probability at `slots[i]` (1 everywhere except possibly the last).
#[derive(Debug, Clone, PartialEq)]
pub struct OnehotSchedule {
    pub slots: Vec<usize>,
    pub probs: Vec<f64>,
}

impl OnehotSchedule {
    pub fn expected_count(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Builds `ceil(target)` equidistant slots whose expected count is `target`.
///
/// Slot `i` sits at the 1-based timestep `round((i + 0.5) * T / k)`; a
/// collision moves the slot to the next free timestep. The fractional
/// remainder of the target is carried by the last slot.
pub fn random_1hot_schedule(target_count: f64, horizon: usize) -> Result<OnehotSchedule> {
    if !(0.0..=horizon as f64).contains(&target_count) {
        return Err(Error::Input(format!(
            "target count {target_count} outside [0, {horizon}]"
        )));
    }
    let k = target_count.ceil() as usize;
    let mut taken = vec![false; horizon];
    let mut slots = Vec::with_capacity(k);
    for i in 0..k {
        let one_based = ((i as f64 + 0.5) * horizon as f64 / k as f64).round() as usize;
        let mut t = one_based.clamp(1, horizon) - 1;
        while taken[t] {
            t = (t + 1) % horizon;
        }
        taken[t] = true;
        slots.push(t);
    }
    slots.sort_unstable();
    let mut probs = vec![1.0; k];
    if let Some(last) = probs.last_mut() {
        *last = target_count - (k - 1) as f64;
    }
    Ok(OnehotSchedule { slots, probs })
}

/// Acquires at fixed equidistant timesteps matching per-modality target counts.
#[derive(Debug, Clone)]
pub struct RandomOnehotPolicy {
    schedules: Vec<OnehotSchedule>,
}

impl RandomOnehotPolicy {
    /// Schedules matching per-modality acquisition rates over `horizon` steps.
    pub fn from_rates(rates: &[f64], horizon: usize) -> Result<Self> {
        check_rates(rates)?;
        let schedules = rates
            .iter()
            .map(|r| random_1hot_schedule((r * horizon as f64).min(horizon as f64), horizon))
            .collect::<Result<_>>()?;
        Ok(Self { schedules })
    }

    pub fn schedules(&self) -> &[OnehotSchedule] {
        &self.schedules
    }

    pub fn expected_cost(&self, costs: &CostSchedule) -> f64 {
        costs
            .as_slice()
            .iter()
            .zip(&self.schedules)
            .map(|(c, s)| c * s.expected_count())
            .sum()
    }
}

impl Policy for RandomOnehotPolicy {
    fn name(&self) -> String {
        "random-1hot".into()
    }

    fn reset(&mut self, _batch: usize) {}

    fn act(&mut self, t: usize, episodes: &[Episode], rng: &mut SplitMix64) -> Result<Vec<ActionVector>> {
        Ok(episodes
            .iter()
            .map(|_| {
                self.schedules
                    .iter()
                    .map(|s| match s.slots.iter().position(|&slot| slot == t) {
                        Some(i) if s.probs[i] >= 1.0 => true,
                        Some(i) => rng.bernoulli(s.probs[i]),
                        None => false,
                    })
                    .collect()
            })
            .collect())
    }
}

/// Causal oracle for the synthetic task.
///
/// The tracker only reads counter values it asked for itself. It observes
/// the start of every countdown and extrapolates the rest, acquiring the
/// digit exactly when the extrapolated counter reaches `counter_low`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTracker {
    counter_low: i32,
    horizon: usize,
    next_t: usize,
    /// Counter value at the previous timestep, when known.
    previous: Option<i32>,
    /// The counter at the previous timestep was requested and must be visible now.
    awaiting_counter: bool,
}

impl OracleTracker {
    pub fn new(horizon: usize, counter_low: i32) -> Self {
        Self {
            counter_low,
            horizon,
            next_t: 0,
            previous: None,
            awaiting_counter: false,
        }
    }

    /// Decisions for timestep `t` given the masked history so far.
    pub fn step(&mut self, history: &MaskedSequence, t: usize) -> Result<ActionVector> {
        if t != self.next_t || t >= self.horizon {
            return Err(Error::State(format!(
                "oracle asked for timestep {t}, expected {} (horizon {})",
                self.next_t, self.horizon
            )));
        }
        if self.awaiting_counter {
            let v = history.observed(t - 1, COUNTER).ok_or_else(|| {
                Error::State(format!("requested counter at timestep {} is not in the history", t - 1))
            })?;
            self.previous = Some(v);
            self.awaiting_counter = false;
        }
        self.next_t += 1;

        let mut action = vec![false; NUM_MODALITIES];
        let starts_here = t == 0 || self.previous == Some(self.counter_low);
        if starts_here {
            // A start value always exceeds counter_low, so the digit is irrelevant.
            self.previous = None;
            if t + 1 < self.horizon {
                action[COUNTER] = true;
                self.awaiting_counter = true;
            }
        } else if let Some(prev) = self.previous {
            let value = prev - 1;
            action[DIGIT] = value == self.counter_low;
            self.previous = Some(value);
        }
        Ok(action)
    }
}

/// One causal oracle step for timestep `t`.
pub fn oracle_policy_step(tracker: &mut OracleTracker, history: &MaskedSequence, t: usize) -> Result<ActionVector> {
    tracker.step(history, t)
}

#[derive(Debug, Clone)]
pub struct OraclePolicy {
    counter_low: i32,
    trackers: Vec<OracleTracker>,
}

impl OraclePolicy {
    pub fn new(counter_low: i32) -> Self {
        Self {
            counter_low,
            trackers: Vec::new(),
        }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn reset(&mut self, _batch: usize) {
        self.trackers.clear();
    }

    fn act(&mut self, t: usize, episodes: &[Episode], _rng: &mut SplitMix64) -> Result<Vec<ActionVector>> {
        if t == 0 {
            self.trackers = episodes
                .iter()
                .map(|e| OracleTracker::new(e.horizon(), self.counter_low))
                .collect();
        }
        self.trackers
            .iter_mut()
            .zip(episodes)
            .map(|(tracker, e)| tracker.step(e.view(), t))
            .collect()
    }
}
