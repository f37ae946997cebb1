//! Segmentation and colorization metrics on dense 2-D grids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid, serialized as `{"shape": [h, w], "data": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Result<Self> {
        let g = Self { shape, data };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.shape[0] * self.shape[1] != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid shape {:?} needs {} values, found {}",
                self.shape,
                self.shape[0] * self.shape[1],
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("grid holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        g.validate()?;
        Ok(g)
    }
}

fn same_shape(a: &Grid, b: &Grid) -> Result<()> {
    if a.shape != b.shape || a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// Intersection over union of the foreground cells (value >= 0.5).
/// Two empty masks agree perfectly and score 1.
pub fn miou(pred: &Grid, gt: &Grid) -> Result<f64> {
    same_shape(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p >= 0.5, g >= 0.5);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

pub fn mse(pred: &Grid, gt: &Grid) -> Result<f64> {
    same_shape(pred, gt)?;
    if pred.data.is_empty() {
        return Err(Error::ShapeMismatch("empty grid".into()));
    }
    let sum: f64 = pred.data.iter().zip(&gt.data).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / pred.data.len() as f64)
}
