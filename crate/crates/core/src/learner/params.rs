//! Flat parameter blocks with named matrix slices.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Gradients, Tape, Var};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl SliceSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A flat parameter vector partitioned into named `rows x cols` slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub slices: Vec<SliceSpec>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn new(shapes: &[(&str, usize, usize)]) -> Self {
        let mut slices = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(name, rows, cols) in shapes {
            slices.push(SliceSpec {
                name: name.to_string(),
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Self {
            slices,
            data: vec![0.0; offset],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&SliceSpec> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn values(&self, name: &str) -> &[f64] {
        let s = self.slice(name).unwrap_or_else(|| panic!("no slice named {name}"));
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn values_mut(&mut self, name: &str) -> &mut [f64] {
        let s = self.slice(name).unwrap_or_else(|| panic!("no slice named {name}")).clone();
        &mut self.data[s.offset..s.offset + s.len()]
    }

    pub fn matrix(&self, spec: &SliceSpec) -> Array2<f64> {
        Array2::from_shape_vec(
            (spec.rows, spec.cols),
            self.data[spec.offset..spec.offset + spec.len()].to_vec(),
        )
        .expect("slice shape")
    }

    /// Records every slice as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundBlock {
        BoundBlock {
            vars: self.slices.iter().map(|s| tape.leaf(self.matrix(s))).collect(),
        }
    }

    /// Flat gradient of this block; unused slices contribute zeros.
    pub fn gradient(&self, bound: &BoundBlock, grads: &Gradients) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for (spec, var) in self.slices.iter().zip(&bound.vars) {
            if let Some(g) = grads.get(*var) {
                for (dst, src) in out[spec.offset..spec.offset + spec.len()].iter_mut().zip(g.iter()) {
                    *dst = *src;
                }
            }
        }
        out
    }

    /// Scaled-normal initialisation for slices ending in `.w`, zeros for
    /// biases and for the slices listed in `zero`.
    pub fn init(&mut self, rng: &mut SplitMix64, zero: &[&str]) {
        for spec in self.slices.clone() {
            let dst = &mut self.data[spec.offset..spec.offset + spec.len()];
            if spec.name.ends_with(".w") && !zero.contains(&spec.name.as_str()) {
                let std = (2.0 / spec.rows as f64).sqrt();
                for v in dst.iter_mut() {
                    *v = std * rng.normal();
                }
            } else {
                dst.fill(0.0);
            }
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training {
                step: 0,
                detail: format!("{what} parameter {i} is not finite"),
            });
        }
        Ok(())
    }
}

/// Leaves of a [`ParamBlock`] recorded on a tape, in slice order.
#[derive(Debug, Clone)]
pub struct BoundBlock {
    pub vars: Vec<Var>,
}

impl BoundBlock {
    pub fn var(&self, block: &ParamBlock, name: &str) -> Var {
        let i = block
            .slices
            .iter()
            .position(|s| s.name == name)
            .unwrap_or_else(|| panic!("no slice named {name}"));
        self.vars[i]
    }
}

/// SHA-256 over the little-endian bytes of the given blocks, as hex.
pub fn checksum<'a>(blocks: impl IntoIterator<Item = &'a ParamBlock>) -> String {
    let mut h = Sha256::new();
    for b in blocks {
        for v in &b.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
