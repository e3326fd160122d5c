//! Parametric model families with exact forward evaluation and analytic
//! reverse-mode gradients with respect to both the parameter vector and the
//! input.
//!
//! All families produce a scalar output; vector-valued targets are handled
//! component-wise by the callers (one model per component). A model can be
//! wrapped by an indicator gate (forcing it to equal a prescribed affine
//! function on a set) and by an output saturation, in the composition order
//! `saturate(gate_blend(...))`.

mod envelope;
mod icnn;
mod indicator;
mod max_affine;
mod mlp;
mod saturation;

pub use indicator::{indicator_eval, AffineMap, IndicatorMode, IndicatorSpec};
pub use saturation::{
    sat_hard, sat_smooth, smooth_sat_scalar, smooth_sat_scalar_grad, SatMode, SaturationSpec,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{positive_from_raw, positive_from_raw_deriv, raw_from_positive};

/// One named block of parameters inside the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type ParamLayout = Vec<LayoutEntry>;

mod f64_strings {
    //! Serializes flat parameter values as decimal strings so that JSON
    //! round-trips are bit-exact.
    use serde::{self, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_seq(values.iter().map(|v| format!("{v}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
        let strings = Vec::<String>::deserialize(de)?;
        strings
            .iter()
            .map(|s| s.parse::<f64>().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Flat trainable parameter vector plus the layout map naming its blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVec {
    #[serde(with = "f64_strings")]
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVec {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        let mut expected = 0usize;
        for entry in &layout {
            if entry.offset != expected {
                return Err(Error::InvalidArgument(format!(
                    "layout block '{}' at offset {} but expected {}",
                    entry.name, entry.offset, expected
                )));
            }
            expected += entry.len();
        }
        if expected != values.len() {
            return Err(Error::dim("ParamVec length", expected, values.len()));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slice of the block with the given name, if present.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.values[e.offset..e.offset + e.len()])
    }
}

/// Activation functions for hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Softplus => crate::math::softplus(z),
            Activation::Sigmoid => crate::math::sigmoid(z),
        }
    }

    /// Value and derivative; the derivative at a ReLU-type kink is the
    /// left value (0 at exactly 0) for deterministic subgradients.
    pub fn value_grad(&self, z: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (slope * z, *slope)
                }
            }
            Activation::Softplus => (crate::math::softplus(z), crate::math::sigmoid(z)),
            Activation::Sigmoid => {
                let s = crate::math::sigmoid(z);
                (s, s * (1.0 - s))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = self {
            if !(*slope > 0.0 && *slope < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "leaky-relu slope must lie in (0,1), got {slope}"
                )));
            }
        }
        Ok(())
    }
}

/// Nonnegative output activation used in the envelope network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveActivation {
    Relu,
    Sigmoid,
}

impl PositiveActivation {
    fn value_grad(&self, z: f64) -> (f64, f64) {
        match self {
            PositiveActivation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            PositiveActivation::Sigmoid => {
                let s = crate::math::sigmoid(z);
                (s, s * (1.0 - s))
            }
        }
    }
}

/// The parametric families supported by the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// Feedforward network with hidden widths, per-layer activations and a
    /// scalar linear output; `linear_bypass` adds a direct affine term in x.
    Mlp {
        widths: Vec<usize>,
        activations: Vec<Activation>,
        linear_bypass: bool,
    },
    /// Convex piecewise-affine `max_i (A_i x - b_i)`.
    MaxAffine { rows: usize },
    /// Input-convex network: softplus activations, squared hidden-to-hidden
    /// weights, per-layer linear bypass in x. Convex in x for any parameters.
    InputConvexNn { widths: Vec<usize> },
    /// Strictly positive two-hidden-layer network for envelope functions:
    /// squared output weights, softplus-floored output bias.
    EnvelopeNn {
        widths: [usize; 2],
        activation: Activation,
        positive_activation: PositiveActivation,
    },
}

/// Prescribed affine function `w(x) = weights . x + offset` that a gated
/// model must reproduce on the gate's set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub indicator: IndicatorSpec,
    pub w_weights: Vec<f64>,
    pub w_offset: f64,
}

/// Complete model description: family, optional gate, optional saturation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<SaturationSpec>,
}

impl ModelSpec {
    pub fn plain(input_dim: usize, family: Family) -> Self {
        Self {
            input_dim,
            family,
            gate: None,
            saturation: None,
        }
    }

    /// Standard MLP constructor with one activation shared by all layers.
    pub fn mlp(input_dim: usize, widths: &[usize], activation: Activation, bypass: bool) -> Self {
        Self::plain(
            input_dim,
            Family::Mlp {
                widths: widths.to_vec(),
                activations: vec![activation; widths.len()],
                linear_bypass: bypass,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        match &self.family {
            Family::Mlp {
                widths,
                activations,
                ..
            } => {
                if widths.iter().any(|w| *w == 0) {
                    return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
                }
                if widths.len() != activations.len() {
                    return Err(Error::dim("MLP activations", widths.len(), activations.len()));
                }
                for a in activations {
                    a.validate()?;
                }
            }
            Family::MaxAffine { rows } => {
                if *rows == 0 {
                    return Err(Error::InvalidArgument("max-affine needs rows >= 1".into()));
                }
            }
            Family::InputConvexNn { widths } => {
                if widths.is_empty() || widths.iter().any(|w| *w == 0) {
                    return Err(Error::InvalidArgument("icnn widths must be >= 1".into()));
                }
            }
            Family::EnvelopeNn {
                widths, activation, ..
            } => {
                if widths[0] == 0 || widths[1] == 0 {
                    return Err(Error::InvalidArgument("envelope widths must be >= 1".into()));
                }
                activation.validate()?;
            }
        }
        if let Some(gate) = &self.gate {
            gate.indicator.validate(self.input_dim)?;
            if gate.w_weights.len() != self.input_dim {
                return Err(Error::dim("gate w(x)", self.input_dim, gate.w_weights.len()));
            }
        }
        if let Some(sat) = &self.saturation {
            sat.validate()?;
            if sat.y_min.len() != 1 {
                return Err(Error::dim("model saturation is scalar", 1, sat.y_min.len()));
            }
        }
        Ok(())
    }

    fn family_layout(&self) -> ParamLayout {
        let n = self.input_dim;
        let mut layout = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, rows: usize, cols: usize| {
            layout.push(LayoutEntry {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        match &self.family {
            Family::Mlp {
                widths,
                linear_bypass,
                ..
            } => {
                let mut prev = n;
                for (l, w) in widths.iter().enumerate() {
                    push(format!("w{}", l + 1), *w, prev);
                    push(format!("b{}", l + 1), *w, 1);
                    prev = *w;
                }
                push("w_out".into(), 1, prev);
                push("b_out".into(), 1, 1);
                if *linear_bypass {
                    push("bypass".into(), 1, n);
                }
            }
            Family::MaxAffine { rows } => {
                push("a".into(), *rows, n);
                push("b".into(), *rows, 1);
            }
            Family::InputConvexNn { widths } => {
                let mut prev = 0usize;
                for (l, m) in widths.iter().enumerate() {
                    if l > 0 {
                        push(format!("w{}_raw", l + 1), *m, prev);
                    }
                    push(format!("v{}", l + 1), *m, n);
                    push(format!("b{}", l + 1), *m, 1);
                    prev = *m;
                }
                push("w_out_raw".into(), 1, prev);
                push("v_out".into(), 1, n);
                push("b_out".into(), 1, 1);
            }
            Family::EnvelopeNn { widths, .. } => {
                let [n1, n2] = *widths;
                push("w1".into(), n1, n);
                push("b1".into(), n1, 1);
                push("w2".into(), n2, n1);
                push("b2".into(), n2, 1);
                push("w3_raw".into(), 1, n2);
                push("b3_raw".into(), 1, 1);
            }
        }
        layout
    }

    fn gate_beta_trainable(&self) -> bool {
        self.gate
            .as_ref()
            .map(|g| g.indicator.trainable)
            .unwrap_or(false)
    }

    fn sat_eta_trainable(&self) -> bool {
        self.saturation
            .as_ref()
            .map(|s| s.trainable && s.mode == SatMode::Smooth)
            .unwrap_or(false)
    }

    /// Resolves the gate beta, either fixed from the spec or from theta.
    fn gate_beta(&self, theta: &[f64], n_family: usize) -> (f64, Option<usize>) {
        let gate = self.gate.as_ref().expect("gate present");
        if gate.indicator.trainable {
            let idx = n_family;
            (positive_from_raw(theta[idx]), Some(idx))
        } else {
            (gate.indicator.beta, None)
        }
    }

    fn sat_eta(&self, theta: &[f64], n_family: usize) -> (f64, Option<usize>) {
        let sat = self.saturation.as_ref().expect("saturation present");
        if self.sat_eta_trainable() {
            let idx = n_family + usize::from(self.gate_beta_trainable());
            (positive_from_raw(theta[idx]), Some(idx))
        } else {
            (sat.eta, None)
        }
    }
}

/// A scalar-output parametric model: forward value plus reverse-mode
/// gradients of `seed * output` with respect to theta and x.
///
/// `eval_grad` accumulates into the provided gradient buffers (callers zero
/// them), so per-sample contributions can be summed without reallocation.
pub trait Surrogate: Sync {
    fn input_dim(&self) -> usize;
    fn num_params(&self) -> usize;
    fn layout(&self) -> ParamLayout;
    /// Fresh parameters from the caller-supplied RNG: uniform Glorot weights,
    /// zero biases, raw beta/eta initialized at their configured values.
    fn init_params(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64>;
    fn eval_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        seed: f64,
        grad_theta: &mut [f64],
        grad_x: &mut [f64],
    ) -> Result<f64>;

    /// Convenience wrapper returning freshly allocated gradients.
    fn grad(&self, theta: &[f64], x: &[f64], seed: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut gt = vec![0.0; self.num_params()];
        let mut gx = vec![0.0; self.input_dim()];
        let v = self.eval_grad(theta, x, seed, &mut gt, &mut gx)?;
        Ok((v, gt, gx))
    }

    /// Wraps parameters with this model's layout.
    fn param_vec(&self, values: Vec<f64>) -> Result<ParamVec> {
        ParamVec::new(values, self.layout())
    }
}

fn check_dims(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::dim("model input", spec.input_dim, x.len()));
    }
    let expected = spec.num_params();
    if theta.len() != expected {
        return Err(Error::dim("model parameters", expected, theta.len()));
    }
    Ok(())
}

impl Surrogate for ModelSpec {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_params(&self) -> usize {
        let family: usize = self.family_layout().iter().map(LayoutEntry::len).sum();
        family + usize::from(self.gate_beta_trainable()) + usize::from(self.sat_eta_trainable())
    }

    fn layout(&self) -> ParamLayout {
        let mut layout = self.family_layout();
        let mut offset: usize = layout.iter().map(LayoutEntry::len).sum();
        if self.gate_beta_trainable() {
            layout.push(LayoutEntry {
                name: "gate_beta_raw".into(),
                rows: 1,
                cols: 1,
                offset,
            });
            offset += 1;
        }
        if self.sat_eta_trainable() {
            layout.push(LayoutEntry {
                name: "sat_eta_raw".into(),
                rows: 1,
                cols: 1,
                offset,
            });
        }
        layout
    }

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let n = self.input_dim;
        let mut theta = Vec::with_capacity(self.num_params());
        for entry in self.family_layout() {
            // Bias blocks and raw output biases start at zero; weight blocks
            // use Glorot-uniform limits based on their shape.
            let is_bias = entry.name.starts_with('b');
            if is_bias {
                theta.extend(std::iter::repeat(0.0).take(entry.len()));
            } else {
                let fan_in = entry.cols.max(1);
                let fan_out = entry.rows.max(1);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for _ in 0..entry.len() {
                    theta.push(rng.gen_range(-limit..limit));
                }
            }
        }
        let _ = n;
        if self.gate_beta_trainable() {
            theta.push(raw_from_positive(self.gate.as_ref().unwrap().indicator.beta));
        }
        if self.sat_eta_trainable() {
            theta.push(raw_from_positive(self.saturation.as_ref().unwrap().eta));
        }
        theta
    }

    fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_dims(self, theta, x)?;
        let n_family: usize = self.family_layout().iter().map(LayoutEntry::len).sum();
        let core = match &self.family {
            Family::Mlp {
                widths,
                activations,
                linear_bypass,
            } => mlp::forward(x, &theta[..n_family], widths, activations, *linear_bypass)?,
            Family::MaxAffine { rows } => max_affine::forward(x, &theta[..n_family], *rows).0,
            Family::InputConvexNn { widths } => icnn::forward(x, &theta[..n_family], widths)?,
            Family::EnvelopeNn {
                widths,
                activation,
                positive_activation,
            } => envelope::forward(x, &theta[..n_family], widths, activation, positive_activation)?,
        };
        let mut out = core;
        if let Some(gate) = &self.gate {
            let (beta, _) = self.gate_beta(theta, n_family);
            let delta = gate.indicator.eval(beta, x);
            let w = affine(x, &gate.w_weights, gate.w_offset);
            out = delta * w + (1.0 - delta) * out;
        }
        if let Some(sat) = &self.saturation {
            out = sat.apply_scalar(out, self.sat_eta(theta, n_family).0);
        }
        if !out.is_finite() {
            return Err(Error::non_finite("model output"));
        }
        Ok(out)
    }

    fn eval_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        seed: f64,
        grad_theta: &mut [f64],
        grad_x: &mut [f64],
    ) -> Result<f64> {
        check_dims(self, theta, x)?;
        if grad_theta.len() != theta.len() {
            return Err(Error::dim("grad_theta buffer", theta.len(), grad_theta.len()));
        }
        if grad_x.len() != x.len() {
            return Err(Error::dim("grad_x buffer", x.len(), grad_x.len()));
        }
        let n_family: usize = self.family_layout().iter().map(LayoutEntry::len).sum();
        let family_theta = &theta[..n_family];

        // Forward pass for the composition values.
        let core = match &self.family {
            Family::Mlp {
                widths,
                activations,
                linear_bypass,
            } => mlp::forward(x, family_theta, widths, activations, *linear_bypass)?,
            Family::MaxAffine { rows } => max_affine::forward(x, family_theta, *rows).0,
            Family::InputConvexNn { widths } => icnn::forward(x, family_theta, widths)?,
            Family::EnvelopeNn {
                widths,
                activation,
                positive_activation,
            } => envelope::forward(x, family_theta, widths, activation, positive_activation)?,
        };

        let mut gate_state = None;
        let blended = if let Some(gate) = &self.gate {
            let (beta, beta_idx) = self.gate_beta(theta, n_family);
            let (delta, ddelta_dbeta, ddelta_dx) = gate.indicator.eval_grad(beta, x);
            let w = affine(x, &gate.w_weights, gate.w_offset);
            gate_state = Some((delta, ddelta_dbeta, ddelta_dx, w, beta_idx));
            delta * w + (1.0 - delta) * core
        } else {
            core
        };

        let (out, dout_dy, dout_deta, eta_idx) = if let Some(sat) = &self.saturation {
            let (eta, eta_idx) = self.sat_eta(theta, n_family);
            let (v, dv_dy, dv_deta) = sat.apply_scalar_grad(blended, eta);
            (v, dv_dy, dv_deta, eta_idx)
        } else {
            (blended, 1.0, 0.0, None)
        };
        if !out.is_finite() {
            return Err(Error::non_finite("model output"));
        }

        // Backward pass.
        let seed_y = seed * dout_dy;
        if let Some(idx) = eta_idx {
            grad_theta[idx] += seed * dout_deta * positive_from_raw_deriv(theta[idx]);
        }
        let seed_core = if let Some((delta, ddelta_dbeta, ddelta_dx, w, beta_idx)) = gate_state {
            let gate = self.gate.as_ref().unwrap();
            if let Some(idx) = beta_idx {
                grad_theta[idx] +=
                    seed_y * (w - core) * ddelta_dbeta * positive_from_raw_deriv(theta[idx]);
            }
            for (gx, (dd, ww)) in grad_x
                .iter_mut()
                .zip(ddelta_dx.iter().zip(&gate.w_weights))
            {
                *gx += seed_y * (dd * (w - core) + delta * ww);
            }
            seed_y * (1.0 - delta)
        } else {
            seed_y
        };

        let gt_family = &mut grad_theta[..n_family];
        match &self.family {
            Family::Mlp {
                widths,
                activations,
                linear_bypass,
            } => mlp::backward(
                x,
                family_theta,
                widths,
                activations,
                *linear_bypass,
                seed_core,
                gt_family,
                grad_x,
            )?,
            Family::MaxAffine { rows } => {
                max_affine::backward(x, family_theta, *rows, seed_core, gt_family, grad_x)
            }
            Family::InputConvexNn { widths } => {
                icnn::backward(x, family_theta, widths, seed_core, gt_family, grad_x)?
            }
            Family::EnvelopeNn {
                widths,
                activation,
                positive_activation,
            } => envelope::backward(
                x,
                family_theta,
                widths,
                activation,
                positive_activation,
                seed_core,
                gt_family,
                grad_x,
            )?,
        }
        Ok(out)
    }
}

pub(crate) fn affine(x: &[f64], weights: &[f64], offset: f64) -> f64 {
    weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + offset
}

/// Forward value of an MLP-family spec; thin named wrapper over `eval`.
pub fn mlp_eval(spec: &ModelSpec, theta: &ParamVec, x: &[f64]) -> Result<f64> {
    spec.eval(&theta.values, x)
}

/// Reverse-mode derivatives of `seed * output` for any family.
pub fn model_grad(
    spec: &ModelSpec,
    theta: &ParamVec,
    x: &[f64],
    seed: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, gt, gx) = spec.grad(&theta.values, x, seed)?;
    Ok((gt, gx))
}

/// Convex PWA evaluation `max_i (A_i x - b_i)` with the attaining row index
/// (smallest index on ties).
pub fn max_affine_eval(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> Result<(f64, usize)> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::dim("max-affine rows", a.len(), b.len()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_row = 0usize;
    for (i, (row, bi)) in a.iter().zip(b).enumerate() {
        if row.len() != x.len() {
            return Err(Error::dim("max-affine row width", x.len(), row.len()));
        }
        let v = affine(x, row, -bi);
        if v > best {
            best = v;
            best_row = i;
        }
    }
    Ok((best, best_row))
}

/// Gated blend `delta(x) * w(x) + (1 - delta(x)) * inner(x; theta)`.
pub fn gated_eval<M: Surrogate + ?Sized>(
    gate: &IndicatorSpec,
    w_weights: &[f64],
    w_offset: f64,
    inner: &M,
    theta: &[f64],
    x: &[f64],
) -> Result<f64> {
    let delta = gate.eval(gate.beta, x);
    let w = affine(x, w_weights, w_offset);
    let v = inner.eval(theta, x)?;
    Ok(delta * w + (1.0 - delta) * v)
}

/// Strictly positive envelope network evaluation.
pub fn envelope_nn_eval(spec: &ModelSpec, psi: &ParamVec, x: &[f64]) -> Result<f64> {
    match spec.family {
        Family::EnvelopeNn { .. } => spec.eval(&psi.values, x),
        _ => Err(Error::UnsupportedFamily(
            "envelope_nn_eval requires the envelope-nn family".into(),
        )),
    }
}

#[cfg(test)]
mod tests;
