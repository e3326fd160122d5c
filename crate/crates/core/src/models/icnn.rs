//! Input-convex network. Hidden-to-hidden weights are stored unconstrained
//! and squared element-wise before use; activations are softplus (convex and
//! nondecreasing), every layer gets a direct affine term in x, so the output
//! is convex in x for any parameter values.
//!
//! Layer structure for hidden widths m_1..m_L:
//!   z_1 = sp(V_1 x + b_1)
//!   z_l = sp(W_l^2 z_{l-1} + V_l x + b_l),   l = 2..L
//!   out = W_out^2 z_L + V_out x + b_out

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

struct Blocks {
    /// (w_raw_offset, v_offset, b_offset) per hidden layer; w_raw_offset
    /// is usize::MAX for the first layer (no hidden-to-hidden block).
    hidden: Vec<(usize, usize, usize)>,
    w_out: usize,
    v_out: usize,
    b_out: usize,
}

fn blocks(n: usize, widths: &[usize]) -> Blocks {
    let mut pos = 0usize;
    let mut hidden = Vec::with_capacity(widths.len());
    let mut prev = 0usize;
    for (l, &m) in widths.iter().enumerate() {
        let w_raw = if l > 0 {
            let o = pos;
            pos += m * prev;
            o
        } else {
            usize::MAX
        };
        let v = pos;
        pos += m * n;
        let b = pos;
        pos += m;
        hidden.push((w_raw, v, b));
        prev = m;
    }
    let w_out = pos;
    pos += prev;
    let v_out = pos;
    pos += n;
    let b_out = pos;
    Blocks {
        hidden,
        w_out,
        v_out,
        b_out,
    }
}

fn layer_pre(
    theta: &[f64],
    x: &[f64],
    prev: Option<&[f64]>,
    blk: (usize, usize, usize),
    m: usize,
) -> Vec<f64> {
    let n = x.len();
    let (w_raw, v, b) = blk;
    let mut z = vec![0.0; m];
    for i in 0..m {
        let mut zi = theta[b + i];
        if let Some(p) = prev {
            let row = &theta[w_raw + i * p.len()..w_raw + (i + 1) * p.len()];
            for (wij, pj) in row.iter().zip(p) {
                zi += wij * wij * pj;
            }
        }
        let vrow = &theta[v + i * n..v + (i + 1) * n];
        zi += super::affine(x, vrow, 0.0);
        z[i] = zi;
    }
    z
}

pub fn forward(x: &[f64], theta: &[f64], widths: &[usize]) -> Result<f64> {
    let blk = blocks(x.len(), widths);
    let mut a: Option<Vec<f64>> = None;
    for (l, &m) in widths.iter().enumerate() {
        let z = layer_pre(theta, x, a.as_deref(), blk.hidden[l], m);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("icnn layer {}", l + 1)));
        }
        a = Some(z.iter().map(|zi| softplus(*zi)).collect());
    }
    let last = a.unwrap();
    let mut out = theta[blk.b_out];
    for (j, aj) in last.iter().enumerate() {
        let w = theta[blk.w_out + j];
        out += w * w * aj;
    }
    out += super::affine(x, &theta[blk.v_out..blk.v_out + x.len()], 0.0);
    if !out.is_finite() {
        return Err(Error::non_finite("icnn output".to_string()));
    }
    Ok(out)
}

pub fn backward(
    x: &[f64],
    theta: &[f64],
    widths: &[usize],
    seed: f64,
    grad_theta: &mut [f64],
    grad_x: &mut [f64],
) -> Result<()> {
    let n = x.len();
    let blk = blocks(n, widths);
    // Forward, retaining activations and softplus derivatives.
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(widths.len());
    let mut derivs: Vec<Vec<f64>> = Vec::with_capacity(widths.len());
    for (l, &m) in widths.iter().enumerate() {
        let prev = acts.last().map(|v| v.as_slice());
        let z = layer_pre(theta, x, prev, blk.hidden[l], m);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("icnn layer {}", l + 1)));
        }
        acts.push(z.iter().map(|zi| softplus(*zi)).collect());
        derivs.push(z.iter().map(|zi| sigmoid(*zi)).collect());
    }

    // Output layer.
    let last = acts.last().unwrap();
    let m_last = last.len();
    let mut delta = vec![0.0; m_last];
    for j in 0..m_last {
        let w = theta[blk.w_out + j];
        grad_theta[blk.w_out + j] += seed * 2.0 * w * last[j];
        delta[j] = seed * w * w;
    }
    grad_theta[blk.b_out] += seed;
    for j in 0..n {
        grad_theta[blk.v_out + j] += seed * x[j];
        grad_x[j] += seed * theta[blk.v_out + j];
    }

    // Hidden layers back to front.
    for l in (0..widths.len()).rev() {
        let m = widths[l];
        let (w_raw, v, b) = blk.hidden[l];
        let prev_len = if l > 0 { widths[l - 1] } else { 0 };
        let mut next_delta = vec![0.0; prev_len];
        for i in 0..m {
            let dz = delta[i] * derivs[l][i];
            grad_theta[b + i] += dz;
            for j in 0..n {
                grad_theta[v + i * n + j] += dz * x[j];
                grad_x[j] += dz * theta[v + i * n + j];
            }
            if l > 0 {
                let prev_act = &acts[l - 1];
                for j in 0..prev_len {
                    let w = theta[w_raw + i * prev_len + j];
                    grad_theta[w_raw + i * prev_len + j] += dz * 2.0 * w * prev_act[j];
                    next_delta[j] += dz * w * w;
                }
            }
        }
        delta = next_delta;
    }
    Ok(())
}
