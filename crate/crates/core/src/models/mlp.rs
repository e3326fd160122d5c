//! Plain feedforward network: hidden layers with configurable activations,
//! scalar linear output, optional direct affine bypass from the input.

use super::Activation;
use crate::error::{Error, Result};

struct Walker<'a> {
    theta: &'a [f64],
    pos: usize,
}

impl<'a> Walker<'a> {
    fn take(&mut self, len: usize) -> &'a [f64] {
        let s = &self.theta[self.pos..self.pos + len];
        self.pos += len;
        s
    }
}

fn layer_forward(
    w: &[f64],
    b: &[f64],
    input: &[f64],
    out_width: usize,
    layer: usize,
) -> Result<Vec<f64>> {
    let n_in = input.len();
    let mut z = Vec::with_capacity(out_width);
    for i in 0..out_width {
        let row = &w[i * n_in..(i + 1) * n_in];
        let zi = super::affine(input, row, b[i]);
        if !zi.is_finite() {
            return Err(Error::non_finite(format!("MLP layer {layer} pre-activation")));
        }
        z.push(zi);
    }
    Ok(z)
}

pub fn forward(
    x: &[f64],
    theta: &[f64],
    widths: &[usize],
    activations: &[Activation],
    bypass: bool,
) -> Result<f64> {
    let mut w = Walker { theta, pos: 0 };
    let mut a: Vec<f64> = x.to_vec();
    for (l, (&width, act)) in widths.iter().zip(activations).enumerate() {
        let wl = w.take(width * a.len());
        let bl = w.take(width);
        let z = layer_forward(wl, bl, &a, width, l + 1)?;
        a = z.iter().map(|zi| act.value(*zi)).collect();
    }
    let w_out = w.take(a.len());
    let b_out = w.take(1)[0];
    let mut out = super::affine(&a, w_out, b_out);
    if bypass {
        let l = w.take(x.len());
        out += super::affine(x, l, 0.0);
    }
    if !out.is_finite() {
        return Err(Error::non_finite("MLP output layer".to_string()));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn backward(
    x: &[f64],
    theta: &[f64],
    widths: &[usize],
    activations: &[Activation],
    bypass: bool,
    seed: f64,
    grad_theta: &mut [f64],
    grad_x: &mut [f64],
) -> Result<()> {
    // Forward pass retaining activations and local derivatives.
    let mut w = Walker { theta, pos: 0 };
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut derivs: Vec<Vec<f64>> = Vec::with_capacity(widths.len());
    let mut offsets = Vec::with_capacity(widths.len());
    for (l, (&width, act)) in widths.iter().zip(activations).enumerate() {
        let n_in = acts[l].len();
        offsets.push(w.pos);
        let wl = w.take(width * n_in);
        let bl = w.take(width);
        let z = layer_forward(wl, bl, &acts[l], width, l + 1)?;
        let mut a = Vec::with_capacity(width);
        let mut d = Vec::with_capacity(width);
        for zi in &z {
            let (v, g) = act.value_grad(*zi);
            a.push(v);
            d.push(g);
        }
        acts.push(a);
        derivs.push(d);
    }
    let out_offset = w.pos;
    let last = acts.last().unwrap().clone();
    let w_out = w.take(last.len());
    let _b_out = w.take(1);
    let bypass_offset = w.pos;

    // Output layer.
    let mut delta: Vec<f64> = w_out.iter().map(|wi| seed * wi).collect();
    for (i, ai) in last.iter().enumerate() {
        grad_theta[out_offset + i] += seed * ai;
    }
    grad_theta[out_offset + last.len()] += seed; // b_out
    if bypass {
        let l = &theta[bypass_offset..bypass_offset + x.len()];
        for (i, xi) in x.iter().enumerate() {
            grad_theta[bypass_offset + i] += seed * xi;
        }
        for (gx, li) in grad_x.iter_mut().zip(l) {
            *gx += seed * li;
        }
    }

    // Hidden layers, back to front.
    for l in (0..widths.len()).rev() {
        let width = widths[l];
        let n_in = acts[l].len();
        let w_off = offsets[l];
        let b_off = w_off + width * n_in;
        let mut next_delta = vec![0.0; n_in];
        for i in 0..width {
            let dz = delta[i] * derivs[l][i];
            grad_theta[b_off + i] += dz;
            let row = &theta[w_off + i * n_in..w_off + (i + 1) * n_in];
            for j in 0..n_in {
                grad_theta[w_off + i * n_in + j] += dz * acts[l][j];
                next_delta[j] += dz * row[j];
            }
        }
        delta = next_delta;
    }
    for (gx, d) in grad_x.iter_mut().zip(&delta) {
        *gx += d;
    }
    Ok(())
}
