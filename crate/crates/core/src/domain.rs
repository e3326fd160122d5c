//! Input domains and sample sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned compact box in R^n, the set over which models are fitted
/// and errors are certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("box must have dimension >= 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::dim("Hyperbox bounds", lower.len(), upper.len()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::non_finite(format!("Hyperbox bound {i}")));
            }
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "box dimension {i}: lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_intervals(intervals: &[(f64, f64)]) -> Result<Self> {
        let (lower, upper) = intervals.iter().copied().unzip();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Dimension has zero extent (lower == upper).
    pub fn is_frozen(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (xi, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *xi = xi.max(*lo).min(*hi);
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// Ordered training samples (x_k, y_k) with a provenance flag per sample
/// (initial design vs actively acquired).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub acquired: Vec<bool>,
}

impl Dataset {
    pub fn from_initial(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::dim("Dataset lengths", xs.len(), ys.len()));
        }
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = xs.len();
        Ok(Self {
            xs,
            ys,
            acquired: vec![false; n],
        })
    }

    pub fn push_acquired(&mut self, x: Vec<f64>, y: f64) {
        self.xs.push(x);
        self.ys.push(y);
        self.acquired.push(true);
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Validates that every sample lies inside `bx` and every target is finite.
    pub fn validate_in(&self, bx: &Hyperbox) -> Result<()> {
        for (k, x) in self.xs.iter().enumerate() {
            if !bx.contains(x) {
                return Err(Error::InvalidArgument(format!(
                    "sample {k} lies outside the input box"
                )));
            }
            if !self.ys[k].is_finite() {
                return Err(Error::non_finite(format!("target value at sample {k}")));
            }
        }
        Ok(())
    }
}
