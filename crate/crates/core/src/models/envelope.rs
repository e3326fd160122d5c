//! Strictly positive two-hidden-layer network for envelope functions:
//!
//!   eps(x) = (W3_raw^2) a+(W2 a(W1 x + b1) + b2) + softplus(b3_raw) + 1e-8
//!
//! The squared output weights, nonnegative activation a+ and the
//! softplus-floored bias keep the output strictly positive for all x and all
//! parameter values.

use super::{Activation, PositiveActivation};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

struct Blocks {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

fn blocks(n: usize, n1: usize, n2: usize) -> Blocks {
    let w1 = 0;
    let b1 = w1 + n1 * n;
    let w2 = b1 + n1;
    let b2 = w2 + n2 * n1;
    let w3 = b2 + n2;
    let b3 = w3 + n2;
    Blocks {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
    }
}

#[allow(clippy::type_complexity)]
fn forward_full(
    x: &[f64],
    theta: &[f64],
    widths: &[usize; 2],
    act: &Activation,
    act_plus: &PositiveActivation,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let [n1, n2] = *widths;
    let blk = blocks(n, n1, n2);
    let mut a1 = vec![0.0; n1];
    let mut d1 = vec![0.0; n1];
    for i in 0..n1 {
        let row = &theta[blk.w1 + i * n..blk.w1 + (i + 1) * n];
        let z = super::affine(x, row, theta[blk.b1 + i]);
        if !z.is_finite() {
            return Err(Error::non_finite("envelope layer 1".to_string()));
        }
        let (v, g) = act.value_grad(z);
        a1[i] = v;
        d1[i] = g;
    }
    let mut a2 = vec![0.0; n2];
    let mut d2 = vec![0.0; n2];
    for i in 0..n2 {
        let row = &theta[blk.w2 + i * n1..blk.w2 + (i + 1) * n1];
        let z = super::affine(&a1, row, theta[blk.b2 + i]);
        if !z.is_finite() {
            return Err(Error::non_finite("envelope layer 2".to_string()));
        }
        let (v, g) = act_plus.value_grad(z);
        a2[i] = v;
        d2[i] = g;
    }
    let mut out = softplus(theta[blk.b3]) + 1e-8;
    for j in 0..n2 {
        let w = theta[blk.w3 + j];
        out += w * w * a2[j];
    }
    Ok((out, a1, d1, a2, d2))
}

pub fn forward(
    x: &[f64],
    theta: &[f64],
    widths: &[usize; 2],
    act: &Activation,
    act_plus: &PositiveActivation,
) -> Result<f64> {
    forward_full(x, theta, widths, act, act_plus).map(|r| r.0)
}

#[allow(clippy::too_many_arguments)]
pub fn backward(
    x: &[f64],
    theta: &[f64],
    widths: &[usize; 2],
    act: &Activation,
    act_plus: &PositiveActivation,
    seed: f64,
    grad_theta: &mut [f64],
    grad_x: &mut [f64],
) -> Result<()> {
    let n = x.len();
    let [n1, n2] = *widths;
    let blk = blocks(n, n1, n2);
    let (_, a1, d1, a2, d2) = forward_full(x, theta, widths, act, act_plus)?;

    grad_theta[blk.b3] += seed * sigmoid(theta[blk.b3]);
    let mut delta2 = vec![0.0; n2];
    for j in 0..n2 {
        let w = theta[blk.w3 + j];
        grad_theta[blk.w3 + j] += seed * 2.0 * w * a2[j];
        delta2[j] = seed * w * w * d2[j];
    }
    let mut delta1 = vec![0.0; n1];
    for i in 0..n2 {
        grad_theta[blk.b2 + i] += delta2[i];
        for j in 0..n1 {
            grad_theta[blk.w2 + i * n1 + j] += delta2[i] * a1[j];
            delta1[j] += delta2[i] * theta[blk.w2 + i * n1 + j];
        }
    }
    for i in 0..n1 {
        let dz = delta1[i] * d1[i];
        grad_theta[blk.b1 + i] += dz;
        for j in 0..n {
            grad_theta[blk.w1 + i * n + j] += dz * x[j];
            grad_x[j] += dz * theta[blk.w1 + i * n + j];
        }
    }
    Ok(())
}
