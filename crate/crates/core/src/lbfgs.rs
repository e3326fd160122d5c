//! Limited-memory BFGS with a strong-Wolfe line search, plus deterministic
//! multi-start. Used for every parameter-training subproblem in the crate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Convergence threshold on the infinity norm of the gradient.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_ls_steps: usize,
    /// Number of multistart runs.
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 2000,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_ls_steps: 30,
            n_starts: 5,
            seed: 0,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < c1 < c2 < 1, got c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::InvalidArgument("memory must be >= 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidArgument("n_starts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LbfgsStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion with `gamma = s.y / y.y` initial scaling; steepest
/// descent before any pair is stored.
fn search_direction(grad: &[f64], pairs: &[Pair]) -> Vec<f64> {
    let mut q = grad.to_vec();
    if pairs.is_empty() {
        q.iter_mut().for_each(|v| *v = -*v);
        return q;
    }
    let m = pairs.len();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        alpha[i] = pairs[i].rho * dot(&pairs[i].s, &q);
        for (qj, yj) in q.iter_mut().zip(&pairs[i].y) {
            *qj -= alpha[i] * yj;
        }
    }
    let last = &pairs[m - 1];
    let yy = dot(&last.y, &last.y);
    let gamma = if yy > 0.0 { dot(&last.s, &last.y) / yy } else { 1.0 };
    q.iter_mut().for_each(|v| *v *= gamma);
    for (i, pair) in pairs.iter().enumerate() {
        let beta = pair.rho * dot(&pair.y, &q);
        for (qj, sj) in q.iter_mut().zip(&pair.s) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct LineSearchResult {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
}

/// Strong-Wolfe line search (bracket + zoom with bisection/interpolation).
fn strong_wolfe<F>(
    obj: &F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    cfg: &LbfgsConfig,
) -> Result<Option<LineSearchResult>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d0 = dot(g0, dir);
    if d0 >= 0.0 {
        return Ok(None); // not a descent direction
    }
    let phi = |alpha: f64| -> Result<(f64, Vec<f64>, f64)> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = obj(&xt)?;
        let d = dot(&g, dir);
        Ok((f, g, d))
    };

    let mut evals = 0usize;
    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = d0;
    let mut alpha = 1.0;
    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None; // (lo, f_lo, d_lo, hi, f_hi, d_hi)

    for _ in 0..cfg.max_ls_steps {
        let (f, g, d) = phi(alpha)?;
        evals += 1;
        if !f.is_finite() {
            // shrink hard toward the last good point
            alpha = 0.5 * (alpha_prev + alpha);
            continue;
        }
        if f > f0 + cfg.c1 * alpha * d0 || (evals > 1 && f >= f_prev) {
            bracket = Some((alpha_prev, f_prev, d_prev, alpha, f, d));
            break;
        }
        if d.abs() <= -cfg.c2 * d0 {
            return Ok(Some(LineSearchResult {
                alpha,
                value: f,
                grad: g,
            }));
        }
        if d >= 0.0 {
            bracket = Some((alpha, f, d, alpha_prev, f_prev, d_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = f;
        d_prev = d;
        alpha *= 2.0;
    }

    let Some((mut lo, mut f_lo, mut d_lo, mut hi, mut f_hi, _d_hi)) = bracket else {
        return Ok(None);
    };

    // zoom
    for _ in 0..cfg.max_ls_steps {
        // quadratic interpolation with bisection safeguard
        let mut a = lo - 0.5 * d_lo * (hi - lo) * (hi - lo) / (f_hi - f_lo - d_lo * (hi - lo));
        let (lo_m, hi_m) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * (hi_m - lo_m);
        if !a.is_finite() || a < lo_m + margin || a > hi_m - margin {
            a = 0.5 * (lo + hi);
        }
        let (f, g, d) = phi(a)?;
        if !f.is_finite() || f > f0 + cfg.c1 * a * d0 || f >= f_lo {
            hi = a;
            f_hi = f;
        } else {
            if d.abs() <= -cfg.c2 * d0 {
                return Ok(Some(LineSearchResult {
                    alpha: a,
                    value: f,
                    grad: g,
                }));
            }
            if d * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = a;
            f_lo = f;
            d_lo = d;
        }
        if (hi - lo).abs() * inf_norm(dir) < 1e-16 {
            break;
        }
    }
    Ok(None)
}

/// Minimizes the objective from `theta0`. The returned value never exceeds
/// the value at `theta0`; on curvature failure the (s, y) pair is skipped.
pub fn minimize<F>(obj: &F, theta0: &[f64], cfg: &LbfgsConfig) -> Result<MinimizeResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let (mut f, mut g) = obj(theta0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("objective at theta0"));
    }
    let mut x = theta0.to_vec();
    let mut pairs: Vec<Pair> = Vec::new();
    let mut restarted = false;

    for iter in 0..cfg.max_iters {
        if inf_norm(&g) <= cfg.grad_tol {
            return Ok(MinimizeResult {
                theta: x,
                value: f,
                iterations: iter,
                status: LbfgsStatus::Converged,
            });
        }
        let dir = search_direction(&g, &pairs);
        match strong_wolfe(obj, &x, f, &g, &dir, cfg)? {
            Some(ls) => {
                let x_new: Vec<f64> = x
                    .iter()
                    .zip(&dir)
                    .map(|(xi, di)| xi + ls.alpha * di)
                    .collect();
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = ls.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                let s_norm = inf_norm(&s);
                let y_norm = inf_norm(&y);
                // skip the pair when curvature information is unusable
                if sy > 1e-10 * s_norm * y_norm {
                    if pairs.len() == cfg.memory {
                        pairs.remove(0);
                    }
                    pairs.push(Pair {
                        s,
                        y,
                        rho: 1.0 / sy,
                    });
                }
                x = x_new;
                f = ls.value;
                g = ls.grad;
            }
            None => {
                if restarted || pairs.is_empty() {
                    return Ok(MinimizeResult {
                        theta: x,
                        value: f,
                        iterations: iter,
                        status: LbfgsStatus::LineSearchFailed,
                    });
                }
                // one restart with steepest descent
                pairs.clear();
                restarted = true;
            }
        }
    }
    Ok(MinimizeResult {
        theta: x,
        value: f,
        iterations: cfg.max_iters,
        status: LbfgsStatus::MaxIters,
    })
}

/// Runs `n_starts` independent minimizations and returns the best result
/// (minimum value, ties broken by start index). Starts run concurrently;
/// the reduction is by index so results are deterministic.
pub fn multistart_minimize<F, I>(
    obj: &F,
    init_sampler: &I,
    cfg: &LbfgsConfig,
) -> Result<(MinimizeResult, usize)>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
    I: Fn(usize) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let runs: Vec<Result<MinimizeResult>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|i| minimize(obj, &init_sampler(i), cfg))
        .collect();
    let mut best: Option<(MinimizeResult, usize)> = None;
    let mut errors = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(res) => {
                if res.value.is_finite()
                    && best.as_ref().map(|(b, _)| res.value < b.value).unwrap_or(true)
                {
                    best = Some((res, i));
                }
            }
            Err(e) => errors.push(format!("start {i}: {e}")),
        }
    }
    best.ok_or_else(|| Error::TrainingFailed(format!("all starts failed: {}", errors.join("; "))))
}
