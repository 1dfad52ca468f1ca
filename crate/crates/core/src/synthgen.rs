//! The counter/digit synthetic task.
//!
//! The `counter` modality is a concatenation of countdowns, each starting at
//! a uniformly drawn value and running down to `counter_low`; the `digit`
//! modality is uniform noise. The label is the sum of the digits at every
//! timestep where the counter sits at `counter_low`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::ActionMatrix;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result, COUNTER, DIGIT, NUM_MODALITIES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub length: usize,
    pub digit_low: i32,
    pub digit_high: i32,
    pub counter_low: i32,
    pub counter_high: i32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            length: 10,
            digit_low: 0,
            digit_high: 2,
            counter_low: 0,
            counter_high: 2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Config("length must be at least 1".into()));
        }
        if self.digit_low < 0 {
            return Err(Error::Config(format!(
                "digit_low must be non-negative (got {})",
                self.digit_low
            )));
        }
        if self.digit_low > self.digit_high {
            return Err(Error::Config(format!(
                "digit range [{}, {}] is empty",
                self.digit_low, self.digit_high
            )));
        }
        if self.counter_low >= self.counter_high {
            return Err(Error::Config(format!(
                "counter_low ({}) must be below counter_high ({})",
                self.counter_low, self.counter_high
            )));
        }
        Ok(())
    }

    /// Size of the label space: at most `floor(T / 2)` countdowns can
    /// complete inside the sequence, each contributing at most `digit_high`.
    pub fn num_classes(&self) -> usize {
        self.digit_high as usize * (self.length / 2) + 1
    }

    /// Inclusive value range of modality `m`.
    pub fn value_range(&self, m: usize) -> (i32, i32) {
        match m {
            DIGIT => (self.digit_low, self.digit_high),
            COUNTER => (self.counter_low, self.counter_high),
            _ => panic!("modality index {m} out of range"),
        }
    }

    pub fn value_ranges(&self) -> Vec<(i32, i32)> {
        (0..NUM_MODALITIES).map(|m| self.value_range(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub digits: Vec<i32>,
    pub counter: Vec<i32>,
    pub label: u32,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// Ground-truth value at timestep `t` (0-based) of modality `m`.
    pub fn value(&self, t: usize, m: usize) -> i32 {
        match m {
            DIGIT => self.digits[t],
            COUNTER => self.counter[t],
            _ => panic!("modality index {m} out of range"),
        }
    }
}

/// Draws one sequence with the given generator.
pub fn draw_sequence(cfg: &SyntheticConfig, rng: &mut SplitMix64) -> Result<LabeledSequence> {
    cfg.validate()?;
    let (clo, chi) = (i64::from(cfg.counter_low), i64::from(cfg.counter_high));
    let (dlo, dhi) = (i64::from(cfg.digit_low), i64::from(cfg.digit_high));
    let rng = std::cell::RefCell::new(rng);
    draw_sequence_from(
        cfg,
        || rng.borrow_mut().uniform_inclusive(clo + 1, chi) as i32,
        || rng.borrow_mut().uniform_inclusive(dlo, dhi) as i32,
    )
}

/// Generation loop with the random draws supplied by the caller.
///
/// `next_start` yields countdown start values and `next_digit` yields digit
/// values; they are called in the interleaved order of the reference
/// generator (start, then one digit per countdown element).
pub fn draw_sequence_from(
    cfg: &SyntheticConfig,
    mut next_start: impl FnMut() -> i32,
    mut next_digit: impl FnMut() -> i32,
) -> Result<LabeledSequence> {
    cfg.validate()?;
    let length = cfg.length;
    let longest_run = (cfg.counter_high - cfg.counter_low + 1) as usize;
    let mut digits: Vec<i32> = Vec::with_capacity(length + longest_run);
    let mut counter: Vec<i32> = Vec::with_capacity(length + longest_run);
    let mut important: Vec<i32> = Vec::new();

    while digits.len() < length {
        let start = next_start();
        if start <= cfg.counter_low || start > cfg.counter_high {
            return Err(Error::Input(format!(
                "countdown start {start} outside [{}, {}]",
                cfg.counter_low + 1,
                cfg.counter_high
            )));
        }
        let run: Vec<i32> = (cfg.counter_low..=start).rev().collect();
        let run_digits: Vec<i32> = run.iter().map(|_| next_digit()).collect();
        // The last digit of a run only counts if the whole run fits.
        if run_digits.len() + digits.len() <= length {
            important.push(*run_digits.last().expect("runs have length >= 2"));
        }
        counter.extend(run);
        digits.extend(run_digits);
    }
    digits.truncate(length);
    counter.truncate(length);
    let label = important.iter().sum::<i32>();
    Ok(LabeledSequence {
        digits,
        counter,
        label: label as u32,
    })
}

/// Closed-form label: sum of the digits at every timestep whose counter
/// equals `counter_low`.
pub fn label_of(digits: &[i32], counter: &[i32], counter_low: i32) -> Result<i64> {
    if digits.len() != counter.len() {
        return Err(Error::Input(format!(
            "digits has {} entries but counter has {}",
            digits.len(),
            counter.len()
        )));
    }
    Ok(digits
        .iter()
        .zip(counter)
        .filter(|(_, &c)| c == counter_low)
        .map(|(&d, _)| i64::from(d))
        .sum())
}

/// The cost-minimal schedule that still determines the label.
///
/// Digits are acquired exactly where the counter is at `counter_low`. The
/// counter is acquired at the first element of every countdown, except a
/// countdown starting on the final timestep: it cannot reach `counter_low`
/// inside the sequence.
pub fn oracle_actions(counter: &[i32], counter_low: i32) -> Result<ActionMatrix> {
    let horizon = counter.len();
    if horizon == 0 {
        return Err(Error::Input("empty counter sequence".into()));
    }
    let mut actions = ActionMatrix::zeros(horizon, NUM_MODALITIES);
    for t in 0..horizon {
        if counter[t] == counter_low {
            actions.set(t, DIGIT, true);
        }
        let is_start = t == 0 || counter[t - 1] == counter_low;
        if is_start && t + 1 < horizon {
            actions.set(t, COUNTER, true);
        }
    }
    Ok(actions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRates {
    pub digit: f64,
    pub counter: f64,
}

/// Monte-Carlo oracle acquisition rates over `n_sequences` fresh draws.
pub fn oracle_rates(cfg: &SyntheticConfig, n_sequences: usize, seed: u64) -> Result<OracleRates> {
    cfg.validate()?;
    if n_sequences == 0 {
        return Err(Error::Input("n_sequences must be at least 1".into()));
    }
    let counts = (0..n_sequences)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
            let seq = draw_sequence(cfg, &mut rng)?;
            let a = oracle_actions(&seq.counter, cfg.counter_low)?;
            Ok((a.count(DIGIT) as u64, a.count(COUNTER) as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let (d, c) = counts
        .iter()
        .fold((0u64, 0u64), |(d, c), &(dd, cc)| (d + dd, c + cc));
    let cells = (n_sequences * cfg.length) as f64;
    Ok(OracleRates {
        digit: d as f64 / cells,
        counter: c as f64 / cells,
    })
}
