//! Constraint-satisfaction surrogates: fit a sign-smoothed surrogate of a
//! constraint function, compute the certified shift by global minimization,
//! and emit a conservative replacement constraint.
//!
//! The guarantee `fbar(x) <= 0  =>  f(x) <= 0` holds exactly when the global
//! minimization is exact; since DIRECT is approximate, certificates are "up
//! to global-optimization tightness" and reports carry the budgets used.

use serde::{Deserialize, Serialize};

use crate::active::{fit_worst_case, ActiveConfig, FitReport};
use crate::direct::{maximize, DirectConfig};
use crate::domain::Hyperbox;
use crate::error::{Error, Result};
use crate::models::{Family, ModelSpec, ParamVec, Surrogate};

/// The paper-wide sign convention: -1 for x <= 0, +1 for x > 0, so the
/// indicator (1 + sign(x))/2 is exactly {0, 1}-valued.
pub fn sign_convention(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// A trained surrogate view with outputs passed through tanh(eta * .).
/// Used during training only; the transform is dropped afterwards.
pub struct SignTransformed<'a, M: Surrogate + ?Sized> {
    pub inner: &'a M,
    pub eta: f64,
}

impl<'a, M: Surrogate + ?Sized> Surrogate for SignTransformed<'a, M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn layout(&self) -> crate::models::ParamLayout {
        self.inner.layout()
    }

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.inner.init_params(rng)
    }

    fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        Ok((self.eta * self.inner.eval(theta, x)?).tanh())
    }

    fn eval_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        seed: f64,
        grad_theta: &mut [f64],
        grad_x: &mut [f64],
    ) -> Result<f64> {
        // d/du tanh(eta u) = eta (1 - tanh^2): one forward for the chain
        // factor, then the inner backward with the scaled seed.
        let u = self.inner.eval(theta, x)?;
        let t = (self.eta * u).tanh();
        let chain = self.eta * (1.0 - t * t);
        self.inner
            .eval_grad(theta, x, seed * chain, grad_theta, grad_x)?;
        Ok(t)
    }
}

/// Certified conservative constraint record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintCert {
    pub model: ModelSpec,
    pub theta_star: ParamVec,
    pub delta_f: f64,
    pub epsilon_f: f64,
    pub sign_eta: f64,
    pub input_box: Hyperbox,
    /// Evaluations spent by the global minimization of the shifted
    /// objective; the certificate is valid up to this search's tightness.
    pub delta_f_evals: usize,
}

impl ConstraintCert {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon_f must be > 0, got {}",
                self.epsilon_f
            )));
        }
        Ok(())
    }
}

/// Runs the active-learning fit on the sign-transformed problem: targets
/// s(f(x)) against model outputs s(fhat(x; theta)). The returned parameters
/// are used without the transform afterwards.
pub fn fit_sign_surrogate<F>(
    target: &F,
    model: &ModelSpec,
    bx: &Hyperbox,
    cfg: &ActiveConfig,
) -> Result<FitReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let eta = cfg.train.sign_eta.ok_or_else(|| {
        Error::InvalidArgument("fit_sign_surrogate needs train.sign_eta set".into())
    })?;
    let transformed_target = |x: &[f64]| (eta * target(x)).tanh();
    let transformed_model = SignTransformed { inner: model, eta };
    fit_worst_case(&transformed_target, &transformed_model, bx, cfg)
}

/// Smallest surrogate value over the region where the true constraint is
/// violated: min over x of (1 + sign(f(x)))/2 * fhat(x; theta), by DIRECT.
pub fn compute_delta_f<F>(
    target: &F,
    model: &ModelSpec,
    theta: &ParamVec,
    bx: &Hyperbox,
    cfg: &DirectConfig,
) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let objective = |x: &[f64]| {
        let ind = 0.5 * (1.0 + sign_convention(target(x)));
        match model.eval(&theta.values, x) {
            // maximize the negation
            Ok(v) => -(ind * v),
            Err(_) => f64::NAN,
        }
    };
    let res = maximize(&objective, bx, cfg)?;
    Ok((-res.value_star, res.evals_used))
}

/// The conservative constraint function `fbar(x) = fhat(x) - delta_f + eps_f`.
pub fn certified_constraint(cert: &ConstraintCert, x: &[f64]) -> Result<f64> {
    let v = cert.model.eval(&cert.theta_star.values, x)?;
    Ok(v - cert.delta_f + cert.epsilon_f)
}

/// Explicit representation of the certified set {x : fbar(x) <= 0}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CertifiedSetForm {
    /// `A x <= b_shifted` for the max-affine family.
    Polyhedron { a: Vec<Vec<f64>>, b: Vec<f64> },
    /// Convex level set `fhat_c(x) <= rhs` for input-convex families.
    ConvexLevelSet { rhs: f64 },
}

/// Emits the explicit certified-set form. For the max-affine family
/// `max_i(A_i x - b_i) - delta_f + eps_f <= 0` is the polyhedron
/// `A x <= b + (delta_f - eps_f) 1`; for input-convex families the level-set
/// threshold is returned instead.
pub fn polyhedral_form(cert: &ConstraintCert) -> Result<CertifiedSetForm> {
    cert.validate()?;
    match &cert.model.family {
        Family::MaxAffine { rows } => {
            let n = cert.model.input_dim;
            let a_block = cert
                .theta_star
                .block("a")
                .ok_or_else(|| Error::InvalidArgument("missing max-affine block".into()))?;
            let b_block = cert
                .theta_star
                .block("b")
                .ok_or_else(|| Error::InvalidArgument("missing max-affine offsets".into()))?;
            let a: Vec<Vec<f64>> = (0..*rows)
                .map(|i| a_block[i * n..(i + 1) * n].to_vec())
                .collect();
            let b: Vec<f64> = b_block
                .iter()
                .map(|bi| bi + cert.delta_f - cert.epsilon_f)
                .collect();
            Ok(CertifiedSetForm::Polyhedron { a, b })
        }
        Family::InputConvexNn { .. } => Ok(CertifiedSetForm::ConvexLevelSet {
            rhs: cert.delta_f - cert.epsilon_f,
        }),
        other => Err(Error::UnsupportedFamily(format!(
            "polyhedral_form supports max-affine and input-convex families, got {other:?}"
        ))),
    }
}

/// Plain-text H-representation, one row per halfspace: "a1 a2 ... an | b".
pub fn h_representation(a: &[Vec<f64>], b: &[f64]) -> String {
    let mut out = String::new();
    for (row, bi) in a.iter().zip(b) {
        let coeffs: Vec<String> = row.iter().map(|c| format!("{c}")).collect();
        out.push_str(&coeffs.join(" "));
        out.push_str(&format!(" | {bi}\n"));
    }
    out
}
