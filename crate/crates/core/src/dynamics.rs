//! Discrete-time uncertain models of continuous-time systems: fixed-step
//! explicit integration, per-component worst-case regression of the sampled
//! transition map, and certified disturbance hyper-boxes.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{fit_worst_case, ActiveConfig, FitReport};
use crate::bounds::constant_asym_bounds;
use crate::direct::DirectConfig;
use crate::domain::Hyperbox;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, ParamVec, Surrogate};

pub type VectorField = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Continuous-time model: state derivative field and optional output map,
/// both supplied as callables by the problem registry.
#[derive(Clone)]
pub struct OdeModel {
    pub n_state: usize,
    pub n_input: usize,
    pub n_output: usize,
    pub vector_field: VectorField,
    pub output_map: Option<VectorField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMethod {
    /// Explicit trapezoidal rule (two stages, order 2).
    Heun,
    /// Classical four-stage Runge-Kutta (order 4).
    Rk4,
}

/// Integrates the state over one sampling interval with constant input,
/// using `substeps` equal sub-intervals.
pub fn integrate_step(
    model: &OdeModel,
    xi: &[f64],
    u: &[f64],
    ts: f64,
    method: IntegrationMethod,
    substeps: usize,
) -> Result<Vec<f64>> {
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    if xi.len() != model.n_state {
        return Err(Error::dim("integrate_step state", model.n_state, xi.len()));
    }
    if u.len() != model.n_input {
        return Err(Error::dim("integrate_step input", model.n_input, u.len()));
    }
    let h = ts / substeps as f64;
    let field = |x: &[f64], stage: usize| -> Result<Vec<f64>> {
        let dx = (model.vector_field)(x, u);
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("vector field at stage {stage}")));
        }
        Ok(dx)
    };
    let mut x = xi.to_vec();
    for _ in 0..substeps {
        match method {
            IntegrationMethod::Heun => {
                let k1 = field(&x, 1)?;
                let pred: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + h * k).collect();
                let k2 = field(&pred, 2)?;
                for i in 0..x.len() {
                    x[i] += 0.5 * h * (k1[i] + k2[i]);
                }
            }
            IntegrationMethod::Rk4 => {
                let k1 = field(&x, 1)?;
                let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + 0.5 * h * k).collect();
                let k2 = field(&x2, 2)?;
                let x3: Vec<f64> = x.iter().zip(&k2).map(|(xi, k)| xi + 0.5 * h * k).collect();
                let k3 = field(&x3, 3)?;
                let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, k)| xi + h * k).collect();
                let k4 = field(&x4, 4)?;
                for i in 0..x.len() {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
    }
    Ok(x)
}

/// One learned component: model and trained parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentModel {
    pub spec: ModelSpec,
    pub theta: ParamVec,
    pub wce: f64,
}

/// Discrete-time uncertain model: per-component transition and output
/// surrogates with certified additive disturbance boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertainModel {
    pub f_hat: Vec<ComponentModel>,
    pub g_hat: Vec<ComponentModel>,
    pub ts: f64,
    /// State disturbance box: interval [-e*_min_j, e*_max_j] per component.
    pub w_box: Hyperbox,
    /// Output disturbance box, empty boxes are represented as dimension-1
    /// degenerate [0, 0] only when outputs exist; `None` when n_output = 0.
    pub v_box: Option<Hyperbox>,
}

impl UncertainModel {
    /// Predicted next state (nominal part, without disturbance).
    pub fn predict(&self, xi: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let x: Vec<f64> = xi.iter().chain(u).copied().collect();
        self.f_hat
            .iter()
            .map(|c| c.spec.eval(&c.theta.values, &x))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SysIdConfig {
    pub ts: f64,
    pub method: IntegrationMethod,
    pub substeps: usize,
    pub active: ActiveConfig,
    /// Budget for the disturbance-box certification runs.
    pub bound_direct: DirectConfig,
}

/// Learns the discrete-time uncertain model component-wise: for each state
/// (and output) component, the target is the sampled transition map obtained
/// by integrating the continuous-time model over one sampling interval; the
/// disturbance intervals are the certified constant asymmetric bounds.
///
/// Components run in parallel. The same integrator configuration generates
/// both training targets and certification targets, so the disturbance boxes
/// capture model-class error rather than integrator error.
pub fn learn_uncertain_model(
    ode: &OdeModel,
    box_xu: &Hyperbox,
    state_models: &[ModelSpec],
    output_models: &[ModelSpec],
    cfg: &SysIdConfig,
) -> Result<(UncertainModel, Vec<FitReport>)> {
    if box_xu.dim() != ode.n_state + ode.n_input {
        return Err(Error::dim(
            "sysid box over (state, input)",
            ode.n_state + ode.n_input,
            box_xu.dim(),
        ));
    }
    if state_models.len() != ode.n_state {
        return Err(Error::dim("state model list", ode.n_state, state_models.len()));
    }
    if output_models.len() != ode.n_output {
        return Err(Error::dim("output model list", ode.n_output, output_models.len()));
    }

    enum Kind {
        State(usize),
        Output(usize),
    }
    let jobs: Vec<(Kind, &ModelSpec)> = state_models
        .iter()
        .enumerate()
        .map(|(j, m)| (Kind::State(j), m))
        .chain(
            output_models
                .iter()
                .enumerate()
                .map(|(j, m)| (Kind::Output(j), m)),
        )
        .collect();

    let results: Vec<Result<(ComponentModel, (f64, f64), FitReport)>> = jobs
        .into_par_iter()
        .map(|(kind, spec)| {
            let target = |x: &[f64]| -> f64 {
                let (xi, u) = x.split_at(ode.n_state);
                match &kind {
                    Kind::State(j) => {
                        match integrate_step(ode, xi, u, cfg.ts, cfg.method, cfg.substeps) {
                            Ok(next) => next[*j],
                            Err(_) => f64::NAN,
                        }
                    }
                    Kind::Output(j) => match &ode.output_map {
                        Some(g) => g(xi, u)[*j],
                        None => f64::NAN,
                    },
                }
            };
            let mut active = cfg.active.clone();
            // decorrelate per-component RNG streams
            active.seed = crate::math::derive_seed(
                cfg.active.seed,
                match &kind {
                    Kind::State(j) => *j as u64,
                    Kind::Output(j) => 0x0ff5e7 + *j as u64,
                },
                0,
            );
            let report = fit_worst_case(&target, spec, box_xu, &active)?;
            let (lo, hi, _) = constant_asym_bounds(
                &target,
                spec,
                &report.theta_star.values,
                box_xu,
                &cfg.bound_direct,
            )?;
            Ok((
                ComponentModel {
                    spec: spec.clone(),
                    theta: report.theta_star.clone(),
                    wce: report.wce,
                },
                (lo, hi),
                report,
            ))
        })
        .collect();

    let mut f_hat = Vec::new();
    let mut g_hat = Vec::new();
    let mut w_lower = Vec::new();
    let mut w_upper = Vec::new();
    let mut v_lower = Vec::new();
    let mut v_upper = Vec::new();
    let mut reports = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        let (component, (lo, hi), report) = res?;
        if i < ode.n_state {
            f_hat.push(component);
            w_lower.push(-lo);
            w_upper.push(hi);
        } else {
            g_hat.push(component);
            v_lower.push(-lo);
            v_upper.push(hi);
        }
        reports.push(report);
    }

    let w_box = Hyperbox::new(w_lower, w_upper)?;
    let v_box = if v_lower.is_empty() {
        None
    } else {
        Some(Hyperbox::new(v_lower, v_upper)?)
    };
    Ok((
        UncertainModel {
            f_hat,
            g_hat,
            ts: cfg.ts,
            w_box,
            v_box,
        },
        reports,
    ))
}

/// The pendulum with friction and cubic stiffness used as a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub inertia: f64,
    pub damping: f64,
    pub mass: f64,
    pub gravity: f64,
    pub length_cg: f64,
    pub k1: f64,
    pub k3: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            inertia: 0.05,
            damping: 0.08,
            mass: 1.0,
            gravity: 9.81,
            length_cg: 0.15,
            k1: 2.0,
            k3: 5.0,
        }
    }
}

pub fn pendulum_ode(p: PendulumParams) -> OdeModel {
    OdeModel {
        n_state: 2,
        n_input: 1,
        n_output: 0,
        vector_field: Arc::new(move |xi, u| {
            let acc = (u[0]
                - p.damping * xi[1]
                - p.mass * p.gravity * p.length_cg * xi[0].sin()
                - p.k1 * xi[0]
                - p.k3 * xi[0].powi(3))
                / p.inertia;
            vec![xi[1], acc]
        }),
        output_map: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::SamplerKind;
    use crate::lbfgs::LbfgsConfig;
    use crate::loss::TrainConfig;
    use crate::models::Activation;

    fn scalar_linear(a: f64) -> OdeModel {
        OdeModel {
            n_state: 1,
            n_input: 1,
            n_output: 0,
            vector_field: Arc::new(move |xi, _u| vec![a * xi[0]]),
            output_map: None,
        }
    }

    #[test]
    fn pendulum_equilibrium_is_fixed() {
        let ode = pendulum_ode(PendulumParams::default());
        let next =
            integrate_step(&ode, &[0.0, 0.0], &[0.0], 0.1, IntegrationMethod::Rk4, 10).unwrap();
        assert_eq!(next, vec![0.0, 0.0]);
    }

    #[test]
    fn rk4_matches_matrix_exponential() {
        let ode = scalar_linear(-1.0);
        let next =
            integrate_step(&ode, &[1.0], &[0.0], 0.1, IntegrationMethod::Rk4, 1).unwrap();
        let exact = (-0.1f64).exp();
        assert!((next[0] - exact).abs() < 1e-7, "{} vs {exact}", next[0]);
    }

    #[test]
    fn heun_default_substeps_close_to_refined_rk4_on_pendulum() {
        // The pendulum is stiff (accelerations up to ~3e3 rad/s^2 on the
        // benchmark box), so a single Heun substep over Ts = 0.1 is off by
        // 1e-2..1e0 depending on the state. With the default 10 substeps the
        // refined-integrator oracle gives 1.5e-3 / 3.9e-3 at the states
        // below; those values are frozen here with a small margin.
        let ode = pendulum_ode(PendulumParams::default());
        for (xi, u, tol) in [([0.3, 0.5], [0.5], 2e-3), ([0.8, -1.5], [1.0], 5e-3)] {
            let heun =
                integrate_step(&ode, &xi, &u, 0.1, IntegrationMethod::Heun, 10).unwrap();
            let fine =
                integrate_step(&ode, &xi, &u, 0.1, IntegrationMethod::Rk4, 100).unwrap();
            for i in 0..2 {
                assert!(
                    (heun[i] - fine[i]).abs() <= tol,
                    "state {xi:?} component {i}: {} vs {}",
                    heun[i],
                    fine[i]
                );
            }
        }
    }

    #[test]
    fn observed_convergence_orders() {
        // Smooth test problem (harmonic oscillator) with analytic solution,
        // so the log-log slopes are measured in the asymptotic regime.
        let ode = OdeModel {
            n_state: 2,
            n_input: 0,
            n_output: 0,
            vector_field: Arc::new(|xi, _| vec![xi[1], -xi[0]]),
            output_map: None,
        };
        let xi = [1.0, 0.0];
        let reference = [1.0f64.cos(), -(1.0f64.sin())];
        for (method, expected) in [(IntegrationMethod::Heun, 2.0), (IntegrationMethod::Rk4, 4.0)] {
            let mut errs = Vec::new();
            for substeps in [8usize, 16, 32] {
                let got = integrate_step(&ode, &xi, &[], 1.0, method, substeps).unwrap();
                let err: f64 = got
                    .iter()
                    .zip(&reference)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                errs.push(err);
            }
            let slope1 = (errs[0] / errs[1]).log2();
            let slope2 = (errs[1] / errs[2]).log2();
            let slope = 0.5 * (slope1 + slope2);
            assert!(
                (slope - expected).abs() < 0.3,
                "{method:?}: slope {slope}, errors {errs:?}"
            );
        }
    }

    #[test]
    fn invalid_substeps_rejected() {
        let ode = scalar_linear(1.0);
        assert!(
            integrate_step(&ode, &[1.0], &[0.0], 0.1, IntegrationMethod::Heun, 0).is_err()
        );
    }

    #[test]
    fn non_finite_field_reports_stage() {
        let ode = OdeModel {
            n_state: 1,
            n_input: 0,
            n_output: 0,
            vector_field: Arc::new(|xi, _| vec![(1.0 / xi[0]).sqrt()]),
            output_map: None,
        };
        let err =
            integrate_step(&ode, &[-1.0], &[], 0.1, IntegrationMethod::Heun, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    fn quick_sysid_cfg(seed: u64) -> SysIdConfig {
        SysIdConfig {
            ts: 0.1,
            method: IntegrationMethod::Heun,
            substeps: 10,
            active: ActiveConfig {
                n_initial: 15,
                max_steps: 3,
                err_threshold: 1e-7,
                sampler: SamplerKind::Lhs,
                train: TrainConfig {
                    gamma: 10.0,
                    nu: 0.0,
                    l2_reg: 1e-9,
                    sign_eta: None,
                },
                lbfgs: LbfgsConfig {
                    max_iters: 250,
                    n_starts: 2,
                    ..Default::default()
                },
                global: DirectConfig::with_budget(400),
                seed,
            },
            bound_direct: DirectConfig::with_budget(600),
        }
    }

    #[test]
    fn linear_system_learned_with_tight_intervals() {
        // xdot = -x + u: the one-step map is linear in (x, u); a linear
        // model family represents it exactly, so the certified disturbance
        // intervals collapse.
        let ode = OdeModel {
            n_state: 1,
            n_input: 1,
            n_output: 0,
            vector_field: Arc::new(|xi, u| vec![-xi[0] + u[0]]),
            output_map: None,
        };
        let bx = Hyperbox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let model = ModelSpec::mlp(2, &[1], Activation::Tanh, true);
        let (um, reports) =
            learn_uncertain_model(&ode, &bx, &[model], &[], &quick_sysid_cfg(2)).unwrap();
        assert_eq!(um.f_hat.len(), 1);
        assert!(um.v_box.is_none());
        assert!(reports[0].wce < 1e-5, "wce = {}", reports[0].wce);
        assert!(um.w_box.width(0) < 1e-5, "W = {:?}", um.w_box);
    }

    #[test]
    fn one_step_containment_on_validation_samples() {
        let ode = pendulum_ode(PendulumParams::default());
        let bx = Hyperbox::new(
            vec![-std::f64::consts::PI, -5.0, -2.0],
            vec![std::f64::consts::PI, 5.0, 2.0],
        )
        .unwrap();
        let model = ModelSpec::mlp(3, &[8], Activation::Relu, true);
        let mut cfg = quick_sysid_cfg(4);
        cfg.active.n_initial = 40;
        cfg.active.max_steps = 6;
        cfg.active.lbfgs.max_iters = 400;
        cfg.active.lbfgs.n_starts = 3;
        cfg.bound_direct = DirectConfig::with_budget(3000);
        let (um, _) =
            learn_uncertain_model(&ode, &bx, &[model.clone(), model], &[], &cfg).unwrap();
        let samples = crate::active::uniform_sample(&bx, 300, 77);
        let mut violations = 0usize;
        for s in &samples {
            let (xi, u) = s.split_at(2);
            let truth =
                integrate_step(&ode, xi, u, cfg.ts, cfg.method, cfg.substeps).unwrap();
            let pred = um.predict(xi, u).unwrap();
            for j in 0..2 {
                let err = truth[j] - pred[j];
                if err < um.w_box.lower[j] - 1e-3 || err > um.w_box.upper[j] + 1e-3 {
                    violations += 1;
                }
            }
        }
        assert!(violations == 0, "containment violations: {violations}");
    }
}
