//! Smooth scalar training objectives: the log-sum-exp relaxation of the
//! sampled minimax problem, envelope-fitting losses, an MSE baseline, and
//! the sign-smoothing transform used for constraint surrogates.
//!
//! All losses return (value, gradient) pairs with exact reverse-mode
//! gradients. Log-sum-exp terms are max-shifted so they cannot overflow;
//! per-sample terms are summed in a fixed order for reproducibility.

use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::models::Surrogate;

/// Knobs of the minimax training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Smoothing parameter of the log-sum-exp max approximation.
    pub gamma: f64,
    /// Weight of the mean-squared-error term added on top of the smoothed
    /// worst-case loss.
    pub nu: f64,
    /// Coefficient of the squared-norm parameter regularizer.
    pub l2_reg: f64,
    /// Sign-smoothing steepness for constraint-surrogate training; `None`
    /// outside that use.
    pub sign_eta: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            nu: 0.0,
            l2_reg: 1e-8,
            sign_eta: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if self.nu < 0.0 || self.l2_reg < 0.0 {
            return Err(Error::InvalidArgument(
                "nu and l2_reg must be nonnegative".into(),
            ));
        }
        if let Some(eta) = self.sign_eta {
            if !(eta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sign_eta must be > 0, got {eta}"
                )));
            }
        }
        Ok(())
    }
}

/// Envelope tightness penalty mu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mu {
    Identity,
    Square,
}

impl Mu {
    fn value_grad(&self, eps: f64) -> (f64, f64) {
        match self {
            Mu::Identity => (eps, 1.0),
            Mu::Square => (eps * eps, 2.0 * eps),
        }
    }
}

fn forward_all<M: Surrogate + ?Sized>(
    model: &M,
    theta: &[f64],
    xs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.len());
    for (k, x) in xs.iter().enumerate() {
        let v = model
            .eval(theta, x)
            .map_err(|e| Error::TrainingFailed(format!("model output at sample {k}: {e}")))?;
        if !v.is_finite() {
            return Err(Error::non_finite(format!("model output at sample {k}")));
        }
        out.push(v);
    }
    Ok(out)
}

/// Smoothed worst-case training loss:
///
///   l2_reg ||theta||^2
///   + (1/gamma) log sum_k (e^{gamma e_k} + e^{-gamma e_k})
///   + (nu/N) sum_k e_k^2,      e_k = y_k - f(x_k; theta)
///
/// The log-sum-exp is shifted by gamma max|e_k| so the exponentials never
/// exceed 1, which also makes the sandwich bounds
/// `max|e| <= loss <= max|e| + log(2N)/gamma` hold exactly in floating point
/// (for nu = l2_reg = 0).
pub fn smooth_linf_loss<M: Surrogate + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let gamma = cfg.gamma;
    let preds = forward_all(model, theta, &data.xs)?;
    let errors: Vec<f64> = data.ys.iter().zip(&preds).map(|(y, p)| y - p).collect();

    let max_abs = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let shift = gamma * max_abs;
    // exponent pairs e^{gamma e - shift}, e^{-gamma e - shift}, each <= 1
    let mut sum = 0.0;
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    for e in &errors {
        let a = (gamma * e - shift).exp();
        let b = (-gamma * e - shift).exp();
        pos.push(a);
        neg.push(b);
        sum += a + b;
    }
    let mut value = max_abs + sum.ln() / gamma;

    // MSE and regularization terms.
    if cfg.nu > 0.0 {
        let mse: f64 = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;
        value += cfg.nu * mse;
    }
    if cfg.l2_reg > 0.0 {
        value += cfg.l2_reg * theta.iter().map(|t| t * t).sum::<f64>();
    }

    // Gradient: seed per sample d(loss)/d f_k, then one backward pass each.
    let mut grad = vec![0.0; theta.len()];
    let mut gx_scratch = vec![0.0; model.input_dim()];
    for k in 0..n {
        // d/de_k of the lse term is (pos - neg)/sum; de/df = -1.
        let mut seed = -(pos[k] - neg[k]) / sum;
        if cfg.nu > 0.0 {
            seed -= 2.0 * cfg.nu / n as f64 * errors[k];
        }
        gx_scratch.iter_mut().for_each(|g| *g = 0.0);
        model.eval_grad(theta, &data.xs[k], seed, &mut grad, &mut gx_scratch)?;
    }
    if cfg.l2_reg > 0.0 {
        for (g, t) in grad.iter_mut().zip(theta) {
            *g += 2.0 * cfg.l2_reg * t;
        }
    }
    Ok((value, grad))
}

/// Plain regularized mean-squared-error loss, used for passive baselines.
pub fn mse_loss<M: Surrogate + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    l2_reg: f64,
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let preds = forward_all(model, theta, &data.xs)?;
    let errors: Vec<f64> = data.ys.iter().zip(&preds).map(|(y, p)| y - p).collect();
    let mut value = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;
    value += l2_reg * theta.iter().map(|t| t * t).sum::<f64>();
    let mut grad = vec![0.0; theta.len()];
    let mut gx = vec![0.0; model.input_dim()];
    for k in 0..n {
        let seed = -2.0 / n as f64 * errors[k];
        gx.iter_mut().for_each(|g| *g = 0.0);
        model.eval_grad(theta, &data.xs[k], seed, &mut grad, &mut gx)?;
    }
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += 2.0 * l2_reg * t;
    }
    Ok((value, grad))
}

/// One-sided envelope loss shared by the symmetric and asymmetric fits:
///
///   rho ||psi||^2 + (1/N) sum_k mu(eps_k)
///   + (1/gamma) log(1 + sum_k e^{gamma (v_k - eps_k)})
///
/// where `v_k` is the violation target at sample k (|e_k| for the symmetric
/// envelope, e_k for the upper one, -e_k for the lower one) and
/// eps_k = envelope(x_k; psi) > 0.
pub fn envelope_loss_directional<M: Surrogate + ?Sized>(
    env: &M,
    psi: &[f64],
    xs: &[Vec<f64>],
    violations: &[f64],
    gamma: f64,
    mu: Mu,
    rho_psi: f64,
) -> Result<(f64, Vec<f64>)> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != violations.len() {
        return Err(Error::dim("envelope loss errors", xs.len(), violations.len()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    let n = xs.len();
    let eps = forward_all(env, psi, xs)?;

    let mut mu_sum = 0.0;
    let mut mu_grads = Vec::with_capacity(n);
    for e in &eps {
        let (v, g) = mu.value_grad(*e);
        mu_sum += v;
        mu_grads.push(g);
    }

    // log(1 + sum e^{gamma d_k}) with shift m = max(0, gamma max d_k).
    let exponents: Vec<f64> = violations
        .iter()
        .zip(&eps)
        .map(|(v, e)| gamma * (v - e))
        .collect();
    let shift = exponents.iter().fold(0.0f64, |m, t| m.max(*t));
    let mut sum = (-shift).exp(); // the constant 1 term
    let terms: Vec<f64> = exponents.iter().map(|t| (t - shift).exp()).collect();
    sum += terms.iter().sum::<f64>();
    let lse = (shift + sum.ln()) / gamma;

    let value =
        rho_psi * psi.iter().map(|p| p * p).sum::<f64>() + mu_sum / n as f64 + lse;

    let mut grad = vec![0.0; psi.len()];
    let mut gx = vec![0.0; env.input_dim()];
    for k in 0..n {
        // d/d eps_k: mu'(eps_k)/N - e^{gamma d_k - m} / sum
        let seed = mu_grads[k] / n as f64 - terms[k] / sum;
        gx.iter_mut().for_each(|g| *g = 0.0);
        env.eval_grad(psi, &xs[k], seed, &mut grad, &mut gx)?;
    }
    for (g, p) in grad.iter_mut().zip(psi) {
        *g += 2.0 * rho_psi * p;
    }
    Ok((value, grad))
}

/// Symmetric envelope loss: penalizes `|e_k| - eps(x_k; psi)` violations.
#[allow(clippy::too_many_arguments)]
pub fn envelope_loss_sym<M: Surrogate + ?Sized>(
    env: &M,
    psi: &[f64],
    xs: &[Vec<f64>],
    errors: &[f64],
    gamma: f64,
    mu: Mu,
    rho_psi: f64,
) -> Result<(f64, Vec<f64>)> {
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    envelope_loss_directional(env, psi, xs, &abs, gamma, mu, rho_psi)
}

/// Joint asymmetric envelope loss over (psi_u, psi_l):
///
///   rho(||psi_u||^2 + ||psi_l||^2) + (1/N) sum mu(eps_u_k + eps_l_k)
///   + (1/gamma) log(1 + sum (e^{gamma(e_k - eps_u_k)} + e^{gamma(-e_k - eps_l_k... )}))
///
/// With an additive mu the two envelopes decouple up to the shared log term
/// and can be trained independently via [`envelope_loss_directional`].
#[allow(clippy::too_many_arguments)]
pub fn envelope_loss_asym<U: Surrogate + ?Sized, L: Surrogate + ?Sized>(
    env_u: &U,
    psi_u: &[f64],
    env_l: &L,
    psi_l: &[f64],
    xs: &[Vec<f64>],
    errors: &[f64],
    gamma: f64,
    mu: Mu,
    rho_psi: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != errors.len() {
        return Err(Error::dim("envelope loss errors", xs.len(), errors.len()));
    }
    let n = xs.len();
    let eps_u = forward_all(env_u, psi_u, xs)?;
    let eps_l = forward_all(env_l, psi_l, xs)?;

    let mut mu_sum = 0.0;
    let mut mu_grads = Vec::with_capacity(n);
    for (u, l) in eps_u.iter().zip(&eps_l) {
        let (v, g) = mu.value_grad(u + l);
        mu_sum += v;
        mu_grads.push(g);
    }

    let exp_u: Vec<f64> = errors
        .iter()
        .zip(&eps_u)
        .map(|(e, eps)| gamma * (e - eps))
        .collect();
    let exp_l: Vec<f64> = errors
        .iter()
        .zip(&eps_l)
        .map(|(e, eps)| gamma * (-e - eps))
        .collect();
    let shift = exp_u
        .iter()
        .chain(&exp_l)
        .fold(0.0f64, |m, t| m.max(*t));
    let mut sum = (-shift).exp();
    let terms_u: Vec<f64> = exp_u.iter().map(|t| (t - shift).exp()).collect();
    let terms_l: Vec<f64> = exp_l.iter().map(|t| (t - shift).exp()).collect();
    sum += terms_u.iter().sum::<f64>() + terms_l.iter().sum::<f64>();
    let lse = (shift + sum.ln()) / gamma;

    let reg = rho_psi
        * (psi_u.iter().map(|p| p * p).sum::<f64>() + psi_l.iter().map(|p| p * p).sum::<f64>());
    let value = reg + mu_sum / n as f64 + lse;

    let mut grad_u = vec![0.0; psi_u.len()];
    let mut grad_l = vec![0.0; psi_l.len()];
    let mut gx = vec![0.0; xs[0].len()];
    for k in 0..n {
        let seed_u = mu_grads[k] / n as f64 - terms_u[k] / sum;
        gx.iter_mut().for_each(|g| *g = 0.0);
        env_u.eval_grad(psi_u, &xs[k], seed_u, &mut grad_u, &mut gx)?;
        let seed_l = mu_grads[k] / n as f64 - terms_l[k] / sum;
        gx.iter_mut().for_each(|g| *g = 0.0);
        env_l.eval_grad(psi_l, &xs[k], seed_l, &mut grad_l, &mut gx)?;
    }
    for (g, p) in grad_u.iter_mut().zip(psi_u) {
        *g += 2.0 * rho_psi * p;
    }
    for (g, p) in grad_l.iter_mut().zip(psi_l) {
        *g += 2.0 * rho_psi * p;
    }
    Ok((value, grad_u, grad_l))
}

/// Smooth sign surrogate `tanh(eta * value)`, applied to both the target and
/// the model output during constraint-surrogate training only.
pub fn sign_transform(value: f64, eta: f64) -> f64 {
    (eta * value).tanh()
}
