//! Convex piecewise-affine family `max_i (A_i x - b_i)`.
//!
//! Parameters: `a` (rows x n, row-major) followed by `b` (rows).
//! Subgradients use the attaining row, smallest index on ties.

pub fn forward(x: &[f64], theta: &[f64], rows: usize) -> (f64, usize) {
    let n = x.len();
    let mut best = f64::NEG_INFINITY;
    let mut best_row = 0usize;
    for i in 0..rows {
        let row = &theta[i * n..(i + 1) * n];
        let v = super::affine(x, row, -theta[rows * n + i]);
        if v > best {
            best = v;
            best_row = i;
        }
    }
    (best, best_row)
}

pub fn backward(
    x: &[f64],
    theta: &[f64],
    rows: usize,
    seed: f64,
    grad_theta: &mut [f64],
    grad_x: &mut [f64],
) {
    let n = x.len();
    let (_, i) = forward(x, theta, rows);
    for j in 0..n {
        grad_theta[i * n + j] += seed * x[j];
        grad_x[j] += seed * theta[i * n + j];
    }
    grad_theta[rows * n + i] -= seed;
}
