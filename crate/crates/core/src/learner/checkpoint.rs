//! Versioned JSON checkpoints of a [`Trainer`].
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every parameter and optimiser moment bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use super::Trainer;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    checksum: String,
    body: T,
}

fn save<T: Serialize>(path: &Path, kind: &str, checksum: String, body: &T) -> Result<()> {
    let env = Envelope {
        format_version: CHECKPOINT_VERSION,
        kind: kind.into(),
        checksum,
        body,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&env)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<(T, String)> {
    let bytes = fs::read(path)?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)?;
    if env.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
            path.display(),
            env.format_version
        )));
    }
    if env.kind != kind {
        return Err(Error::Format(format!("{}: holds a {} not a {kind}", path.display(), env.kind)));
    }
    Ok((env.body, env.checksum))
}

fn verify(path: &Path, params: &ModelParams, stored: &str) -> Result<()> {
    let actual = params.checksum();
    if actual != stored {
        return Err(Error::Format(format!(
            "{}: parameter checksum {actual} does not match recorded {stored}",
            path.display()
        )));
    }
    params.check_finite()
}

pub fn save_trainer(path: &Path, trainer: &Trainer) -> Result<()> {
    save(path, "trainer", trainer.params.checksum(), trainer)
}

pub fn load_trainer(path: &Path) -> Result<Trainer> {
    let (trainer, checksum): (Trainer, _) = load(path, "trainer")?;
    verify(path, &trainer.params, &checksum)?;
    trainer.config.validate()?;
    Ok(trainer)
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    save(path, "params", params.checksum(), params)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let (params, checksum): (ModelParams, _) = load(path, "params")?;
    verify(path, &params, &checksum)?;
    Ok(params)
}
