//! Hard and smooth output saturation.
//!
//! The smooth form
//!   sigma_eta(y) = y_max + (1/eta) * log((1 + e^{-eta(y-y_min)}) / (1 + e^{-eta(y-y_max)}))
//! is evaluated through shifted log1p terms so it cannot overflow; it is
//! strictly increasing in y, stays inside [y_min, y_max] and fixes the
//! midpoint for every eta > 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log1p_exp_neg, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SatMode {
    Hard,
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSpec {
    pub mode: SatMode,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub eta: f64,
    pub trainable: bool,
}

impl SaturationSpec {
    pub fn hard_scalar(lo: f64, hi: f64) -> Self {
        Self {
            mode: SatMode::Hard,
            y_min: vec![lo],
            y_max: vec![hi],
            eta: 1.0,
            trainable: false,
        }
    }

    pub fn smooth_scalar(lo: f64, hi: f64, eta: f64, trainable: bool) -> Self {
        Self {
            mode: SatMode::Smooth,
            y_min: vec![lo],
            y_max: vec![hi],
            eta,
            trainable,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y_min.len() != self.y_max.len() {
            return Err(Error::dim("saturation bounds", self.y_min.len(), self.y_max.len()));
        }
        for (lo, hi) in self.y_min.iter().zip(&self.y_max) {
            match self.mode {
                SatMode::Hard if lo > hi => {
                    return Err(Error::InvalidArgument(format!(
                        "saturation bounds inverted: {lo} > {hi}"
                    )))
                }
                SatMode::Smooth if lo >= hi => {
                    return Err(Error::InvalidArgument(format!(
                        "smooth saturation needs y_min < y_max, got [{lo}, {hi}]"
                    )))
                }
                _ => {}
            }
        }
        if self.mode == SatMode::Smooth && !(self.eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "saturation eta must be > 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Scalar saturation of a model output (first bound component).
    pub fn apply_scalar(&self, y: f64, eta: f64) -> f64 {
        let (lo, hi) = (self.y_min[0], self.y_max[0]);
        match self.mode {
            SatMode::Hard => y.max(lo).min(hi),
            SatMode::Smooth => smooth_sat_scalar(y, lo, hi, eta),
        }
    }

    /// Scalar saturation with derivatives (value, d/dy, d/deta).
    pub fn apply_scalar_grad(&self, y: f64, eta: f64) -> (f64, f64, f64) {
        let (lo, hi) = (self.y_min[0], self.y_max[0]);
        match self.mode {
            SatMode::Hard => {
                if y > lo && y < hi {
                    (y, 1.0, 0.0)
                } else {
                    (y.max(lo).min(hi), 0.0, 0.0)
                }
            }
            SatMode::Smooth => smooth_sat_scalar_grad(y, lo, hi, eta),
        }
    }
}

/// Component-wise clamp `min(max(y, y_min), y_max)`.
pub fn sat_hard(y: &[f64], y_min: &[f64], y_max: &[f64]) -> Result<Vec<f64>> {
    if y.len() != y_min.len() || y.len() != y_max.len() {
        return Err(Error::dim("sat_hard bounds", y.len(), y_min.len().min(y_max.len())));
    }
    for (lo, hi) in y_min.iter().zip(y_max) {
        if lo > hi {
            return Err(Error::InvalidArgument(format!(
                "sat_hard bounds inverted: {lo} > {hi}"
            )));
        }
    }
    Ok(y.iter()
        .zip(y_min.iter().zip(y_max))
        .map(|(yi, (lo, hi))| yi.max(*lo).min(*hi))
        .collect())
}

/// Component-wise smooth saturation.
pub fn sat_smooth(y: &[f64], y_min: &[f64], y_max: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    if y.len() != y_min.len() || y.len() != y_max.len() {
        return Err(Error::dim("sat_smooth bounds", y.len(), y_min.len().min(y_max.len())));
    }
    for (lo, hi) in y_min.iter().zip(y_max) {
        if lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "sat_smooth needs y_min < y_max, got [{lo}, {hi}]"
            )));
        }
    }
    Ok(y.iter()
        .zip(y_min.iter().zip(y_max))
        .map(|(yi, (lo, hi))| smooth_sat_scalar(*yi, *lo, *hi, eta))
        .collect())
}

pub fn smooth_sat_scalar(y: f64, lo: f64, hi: f64, eta: f64) -> f64 {
    hi + (log1p_exp_neg(eta * (y - lo)) - log1p_exp_neg(eta * (y - hi))) / eta
}

/// Smooth saturation value with derivatives with respect to y and eta.
pub fn smooth_sat_scalar_grad(y: f64, lo: f64, hi: f64, eta: f64) -> (f64, f64, f64) {
    let a = eta * (y - lo);
    let b = eta * (y - hi);
    let la = log1p_exp_neg(a);
    let lb = log1p_exp_neg(b);
    let value = hi + (la - lb) / eta;
    let dy = sigmoid(a) - sigmoid(b);
    // d/deta of hi + (l(a(eta)) - l(b(eta)))/eta with l'(t) = sigmoid(t) - 1.
    let deta = ((sigmoid(a) - 1.0) * (y - lo) - (sigmoid(b) - 1.0) * (y - hi)) / eta
        - (la - lb) / (eta * eta);
    (value, dy, deta)
}
