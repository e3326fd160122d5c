//! Smooth/PWA approximations of a constraint set's indicator function,
//! used to force a model to equal a prescribed function on the set
//! G = {x : g(x) <= 0, h(x) = 0} with affine g and h.
//!
//! Both modes evaluate to exactly 1 on G and decay off it at a rate set
//! by beta.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map x -> rows * x + offsets, one scalar constraint per row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl AffineMap {
    pub fn new(rows: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if rows.len() != offsets.len() {
            return Err(Error::dim("AffineMap rows", rows.len(), offsets.len()));
        }
        Ok(Self { rows, offsets })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_value(&self, i: usize, x: &[f64]) -> f64 {
        super::affine(x, &self.rows[i], self.offsets[i])
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dim("AffineMap row width", dim, row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) || !self.offsets[i].is_finite() {
                return Err(Error::non_finite(format!("AffineMap row {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndicatorMode {
    /// `max(1 - beta * max(col(g, +-h, 0)), 0)`
    Pwa,
    /// `exp(-beta * (sum maxzero(g_i) + sum |h_j|))`
    Exp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub mode: IndicatorMode,
    pub g: AffineMap,
    pub h: AffineMap,
    pub beta: f64,
    pub trainable: bool,
}

impl IndicatorSpec {
    pub fn inequalities(mode: IndicatorMode, g: AffineMap, beta: f64, trainable: bool) -> Self {
        Self {
            mode,
            g,
            h: AffineMap::empty(),
            beta,
            trainable,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "indicator beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.g.is_empty() && self.h.is_empty() {
            return Err(Error::InvalidArgument(
                "indicator needs at least one constraint row".into(),
            ));
        }
        self.g.validate(dim)?;
        self.h.validate(dim)
    }

    /// Largest violation `max(col(g(x), +-h(x), 0))` and the gradient of the
    /// attaining row (zero row if the constant 0 attains; smallest index on
    /// ties, g rows before h rows).
    fn pwa_violation(&self, x: &[f64]) -> (f64, Option<(usize, f64)>) {
        let mut best = 0.0f64;
        // (row index into g or h, sign multiplier); None means the 0 term.
        let mut attain: Option<(usize, f64)> = None;
        for i in 0..self.g.len() {
            let v = self.g.row_value(i, x);
            if v > best {
                best = v;
                attain = Some((i, 1.0));
            }
        }
        for j in 0..self.h.len() {
            let v = self.h.row_value(j, x);
            if v > best {
                best = v;
                attain = Some((self.g.len() + j, 1.0));
            }
            if -v > best {
                best = -v;
                attain = Some((self.g.len() + j, -1.0));
            }
        }
        (best, attain)
    }

    /// Violation sum `sum maxzero(g_i) + sum |h_j|` and its x-gradient.
    fn exp_violation(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        let mut grad = grad;
        for i in 0..self.g.len() {
            let v = self.g.row_value(i, x);
            if v > 0.0 {
                total += v;
                if let Some(g) = grad.as_deref_mut() {
                    for (gj, rj) in g.iter_mut().zip(&self.g.rows[i]) {
                        *gj += rj;
                    }
                }
            }
        }
        for j in 0..self.h.len() {
            let v = self.h.row_value(j, x);
            total += v.abs();
            if v != 0.0 {
                if let Some(g) = grad.as_deref_mut() {
                    let s = v.signum();
                    for (gj, rj) in g.iter_mut().zip(&self.h.rows[j]) {
                        *gj += s * rj;
                    }
                }
            }
        }
        total
    }

    /// Indicator value in [0, 1] for the given beta.
    pub fn eval(&self, beta: f64, x: &[f64]) -> f64 {
        match self.mode {
            IndicatorMode::Pwa => {
                let (v, _) = self.pwa_violation(x);
                (1.0 - beta * v).max(0.0)
            }
            IndicatorMode::Exp => {
                let s = self.exp_violation(x, None);
                (-beta * s).exp()
            }
        }
    }

    /// Value plus derivatives with respect to beta and x.
    pub fn eval_grad(&self, beta: f64, x: &[f64]) -> (f64, f64, Vec<f64>) {
        let mut gx = vec![0.0; x.len()];
        match self.mode {
            IndicatorMode::Pwa => {
                let (v, attain) = self.pwa_violation(x);
                let raw = 1.0 - beta * v;
                if raw <= 0.0 {
                    return (0.0, 0.0, gx);
                }
                let dbeta = -v;
                if v > 0.0 {
                    if let Some((idx, sign)) = attain {
                        let row = if idx < self.g.len() {
                            &self.g.rows[idx]
                        } else {
                            &self.h.rows[idx - self.g.len()]
                        };
                        for (gj, rj) in gx.iter_mut().zip(row) {
                            *gj = -beta * sign * rj;
                        }
                    }
                }
                (raw, dbeta, gx)
            }
            IndicatorMode::Exp => {
                let mut gs = vec![0.0; x.len()];
                let s = self.exp_violation(x, Some(&mut gs));
                let delta = (-beta * s).exp();
                for (gj, dsj) in gx.iter_mut().zip(&gs) {
                    *gj = -beta * delta * dsj;
                }
                (delta, -s * delta, gx)
            }
        }
    }
}

/// Standalone indicator evaluation with the spec's own beta.
pub fn indicator_eval(spec: &IndicatorSpec, x: &[f64]) -> Result<f64> {
    spec.validate(x.len())?;
    Ok(spec.eval(spec.beta, x))
}
