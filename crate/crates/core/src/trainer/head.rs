use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learnable linear map `W·v + b` applied to frozen embeddings before scoring.
///
/// Serialized as `{"d_in", "d_out", "weights": [row-major], "bias": [..] | null}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl ProjectionHead {
    pub fn new(d_in: usize, d_out: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        let head = Self {
            d_in,
            d_out,
            weights,
            bias,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn identity(dim: usize, with_bias: bool) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            d_in: dim,
            d_out: dim,
            weights,
            bias: with_bias.then(|| vec![0.0; dim]),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::InvalidParams("head dimensions must be positive".into()));
        }
        if self.weights.len() != self.d_in * self.d_out {
            return Err(Error::ShapeMismatch(format!(
                "head weights hold {} values, expected {}x{}",
                self.weights.len(),
                self.d_out,
                self.d_in
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.d_out {
                return Err(Error::ShapeMismatch(format!(
                    "head bias holds {} values, expected {}",
                    b.len(),
                    self.d_out
                )));
            }
        }
        let finite = self
            .weights
            .iter()
            .chain(self.bias.iter().flatten())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("head has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Row-major `d_out × d_in`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    /// Number of trainable scalars, weights first then bias.
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                found: v.len(),
            });
        }
        let mut out: Vec<f64> = self
            .weights
            .chunks_exact(self.d_in)
            .map(|row| crate::vector::dot(row, v))
            .collect();
        if let Some(b) = &self.bias {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += bi;
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        head.validate()?;
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("head serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
