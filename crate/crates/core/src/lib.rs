//! Cost-aware acquisition of per-timestep, per-modality inputs.
//!
//! An agent walks along a two-modality sequence and decides, at every
//! timestep and for every modality, whether to pay for observing the value.
//! At the end a classifier predicts the label from whatever was acquired.
//! The reward trades acquisition cost against the terminal prediction loss.
//!
//! The crate is organised bottom-up:
//!
//! - [`rng`]: the documented, portable generator every random draw goes through.
//! - [`synthgen`]: the counter/digit synthetic task, its labels and the oracle schedule.
//! - [`env`]: the acquisition POMDP (masked observations, costs, reward).
//! - [`masking`]: random mask samplers for classifier pretraining.
//! - [`policies`]: scripted policies (oracle, random-rate, random-1hot, always, never).
//! - [`learner`]: a small reverse-mode gradient core, the networks, and both training modes.
//! - [`eval`]: metrics, confusion matrices, acquisition patterns and cost sweeps.
//! - [`dataset`]: the line-oriented JSON dataset files.

pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod learner;
pub mod masking;
pub mod policies;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};

/// Index of the digit modality.
pub const DIGIT: usize = 0;
/// Index of the counter modality.
pub const COUNTER: usize = 1;
/// Number of modalities in the synthetic task.
pub const NUM_MODALITIES: usize = 2;
