//! Line-oriented JSON dataset files.
//!
//! The first line is a header record, every following line one sequence:
//!
//! ```text
//! {"format_version":1,"split":"train","config":{...},"seed":7,"count":50000}
//! {"idx":0,"digits":[2,0,1,...],"counter":[1,0,2,...],"label":3}
//! ```
//!
//! Sequence `idx` of split `s` is drawn from its own generator seeded with
//! `derive_seed_tagged(seed, s, idx)`, so files are identical regardless of
//! how many threads produced them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed_tagged, SplitMix64};
use crate::synthgen::{draw_sequence, label_of, LabeledSequence, SyntheticConfig};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub split: String,
    pub config: SyntheticConfig,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    idx: usize,
    digits: Vec<i32>,
    counter: Vec<i32>,
    label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub sequences: Vec<LabeledSequence>,
}

impl Dataset {
    pub fn config(&self) -> &SyntheticConfig {
        &self.header.config
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Draws `n` sequences of the named split.
pub fn generate_split(cfg: &SyntheticConfig, split: &str, n: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let sequences = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed_tagged(seed, split, i as u64));
            draw_sequence(cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            format_version: FORMAT_VERSION,
            split: split.to_string(),
            config: SyntheticConfig {
                seed,
                ..cfg.clone()
            },
            seed,
            count: n,
        },
        sequences,
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &dataset.header)?;
    out.write_all(b"\n")?;
    for (idx, seq) in dataset.sequences.iter().enumerate() {
        let record = Record {
            idx,
            digits: seq.digits.clone(),
            counter: seq.counter.clone(),
            label: seq.label,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a dataset file.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format_version {}",
            path.display(),
            header.format_version
        )));
    }
    header.config.validate()?;
    let cfg = &header.config;
    let mut sequences = Vec::with_capacity(header.count);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 2)))?;
        if r.idx != sequences.len() {
            return Err(Error::Format(format!(
                "{}:{}: record idx {} out of order",
                path.display(),
                lineno + 2,
                r.idx
            )));
        }
        if r.digits.len() != cfg.length || r.counter.len() != cfg.length {
            return Err(Error::Format(format!("{}: record {} has the wrong length", path.display(), r.idx)));
        }
        if label_of(&r.digits, &r.counter, cfg.counter_low)? != i64::from(r.label) {
            return Err(Error::Format(format!("{}: record {} has an inconsistent label", path.display(), r.idx)));
        }
        sequences.push(LabeledSequence {
            digits: r.digits,
            counter: r.counter,
            label: r.label,
        });
    }
    if sequences.len() != header.count {
        return Err(Error::Format(format!(
            "{}: header promises {} records, found {}",
            path.display(),
            header.count,
            sequences.len()
        )));
    }
    Ok(Dataset { header, sequences })
}

/// Writes `train.jsonl` and `test.jsonl` into `dir`.
pub fn generate_dataset(
    dir: &Path,
    cfg: &SyntheticConfig,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Input("dataset sizes must be at least 1".into()));
    }
    std::fs::create_dir_all(dir)?;
    let train_path = dir.join("train.jsonl");
    let test_path = dir.join("test.jsonl");
    write_dataset(&train_path, &generate_split(cfg, "train", n_train, seed)?)?;
    write_dataset(&test_path, &generate_split(cfg, "test", n_test, seed)?)?;
    Ok((train_path, test_path))
}
