//! Benchmark problem registry: closed-form targets, set-membership and
//! system-identification problems, and two multiparametric-QP instances,
//! each with its default model family and training configuration.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::active::{ActiveConfig, SamplerKind};
use crate::direct::DirectConfig;
use crate::domain::Hyperbox;
use crate::dynamics::{pendulum_ode, IntegrationMethod, OdeModel, PendulumParams, SysIdConfig};
use crate::error::{Error, Result};
use crate::lbfgs::LbfgsConfig;
use crate::loss::TrainConfig;
use crate::math::sigmoid;
use crate::models::{Activation, Family, ModelSpec, PositiveActivation};
use crate::qp::{condense_mpc, mpc_gated_model, zoh_discretize, GatedMpcModel, MpQp, MpcSpec, MpcSat};

pub type TargetFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A known scalar function to approximate over a box.
#[derive(Clone)]
pub struct FitProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub target: TargetFn,
    pub input_box: Hyperbox,
    pub model: ModelSpec,
    pub envelope: ModelSpec,
    pub active: ActiveConfig,
    pub rho_psi: f64,
}

/// A constraint set {x : f(x) <= 0} to inner-approximate.
#[derive(Clone)]
pub struct SetProblem {
    pub name: &'static str,
    pub description: &'static str,
    /// Constraint function; the set is its nonpositive sublevel set.
    pub constraint: TargetFn,
    pub input_box: Hyperbox,
    pub max_affine: ModelSpec,
    pub input_convex: ModelSpec,
    pub active: ActiveConfig,
    pub epsilon_f: f64,
}

/// Continuous-time dynamics to identify as an uncertain discrete-time model.
#[derive(Clone)]
pub struct SysIdProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub ode: OdeModel,
    pub box_xu: Hyperbox,
    pub state_models: Vec<ModelSpec>,
    pub output_models: Vec<ModelSpec>,
    pub sysid: SysIdConfig,
}

/// A multiparametric QP whose first solution component is approximated by a
/// gated, saturated network.
#[derive(Clone)]
pub struct MpqpProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub qp: MpQp,
    pub model: GatedMpcModel,
    pub active: ActiveConfig,
    pub qp_tol: f64,
    /// The originating MPC description, when the QP was condensed from one.
    pub mpc: Option<MpcSpec>,
    pub envelope: ModelSpec,
    pub rho_psi: f64,
}

impl MpqpProblem {
    /// The exact map x -> z1*(x) used as the regression target.
    pub fn target(&self) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |x: &[f64]| match crate::qp::solve_qp(&self.qp, x, self.qp_tol) {
            Ok(sol) if sol.status == crate::qp::QpStatus::Optimal => sol.z[0],
            _ => f64::NAN,
        }
    }
}

#[derive(Clone)]
pub enum Problem {
    Fit(FitProblem),
    Set(SetProblem),
    SysId(SysIdProblem),
    Mpqp(MpqpProblem),
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Fit(p) => p.name,
            Problem::Set(p) => p.name,
            Problem::SysId(p) => p.name,
            Problem::Mpqp(p) => p.name,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Problem::Fit(p) => p.description,
            Problem::Set(p) => p.description,
            Problem::SysId(p) => p.description,
            Problem::Mpqp(p) => p.description,
        }
    }
}

pub const PROBLEM_NAMES: [&str; 6] = [
    "scalar-example",
    "gaussian",
    "nonconvex-set",
    "pendulum",
    "random-mpqp",
    "mpc-nonminphase",
];

/// Builds a registry problem by name. Every instance is fully reproducible:
/// the randomly generated mpQP uses a fixed internal seed, and run-to-run
/// variation enters only through the training seed in the configs.
pub fn build(name: &str) -> Result<Problem> {
    match name {
        "scalar-example" => Ok(Problem::Fit(scalar_example())),
        "gaussian" => Ok(Problem::Fit(gaussian())),
        "nonconvex-set" => Ok(Problem::Set(nonconvex_set())),
        "pendulum" => Ok(Problem::SysId(pendulum())),
        "random-mpqp" => Ok(Problem::Mpqp(random_mpqp())),
        "mpc-nonminphase" => Ok(Problem::Mpqp(mpc_nonminphase())),
        other => Err(Error::InvalidArgument(format!(
            "unknown problem '{other}'; known: {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

fn base_active(n_initial: usize, max_steps: usize, l2_reg: f64) -> ActiveConfig {
    ActiveConfig {
        n_initial,
        max_steps,
        err_threshold: 1e-3,
        sampler: SamplerKind::Lhs,
        train: TrainConfig {
            gamma: 10.0,
            nu: 0.0,
            l2_reg,
            sign_eta: None,
        },
        lbfgs: LbfgsConfig {
            max_iters: 500,
            n_starts: 4,
            ..Default::default()
        },
        global: DirectConfig::default(),
        seed: 0,
    }
}

fn envelope_net(dim: usize, widths: [usize; 2]) -> ModelSpec {
    ModelSpec::plain(
        dim,
        Family::EnvelopeNn {
            widths,
            activation: Activation::LeakyRelu { slope: 0.1 },
            positive_activation: PositiveActivation::Relu,
        },
    )
}

/// Scalar example: a damped oscillatory function gated by a logistic factor.
fn scalar_example() -> FitProblem {
    let target: TargetFn = Arc::new(|x: &[f64]| {
        let t = x[0];
        ((t - t * t / 10.0).sin() + (t / 10.0).powi(3) - 0.4 * t) * sigmoid(-t)
    });
    FitProblem {
        name: "scalar-example",
        description: "1-D damped oscillatory target on [-10, 10]; tanh net with \
                      hidden widths (2, 1); N0 = 20, M = 30, err threshold 1e-3.",
        target,
        input_box: Hyperbox::new(vec![-10.0], vec![10.0]).unwrap(),
        model: ModelSpec::mlp(1, &[2, 1], Activation::Tanh, false),
        envelope: envelope_net(1, [10, 5]),
        active: base_active(20, 30, 1e-8),
        rho_psi: 1e-3,
    }
}

/// 2-D Gaussian bump on the unit box.
fn gaussian() -> FitProblem {
    let target: TargetFn = Arc::new(|x: &[f64]| {
        (-30.0 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp()
    });
    let mut active = base_active(100, 50, 1e-8);
    active.err_threshold = 0.0;
    FitProblem {
        name: "gaussian",
        description: "2-D Gaussian bump exp(-30 |x - 0.5|^2) on [0, 1]^2; \
                      leaky-ReLU net with hidden widths (10, 5); N0 = 100, M = 50.",
        target,
        input_box: Hyperbox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        model: ModelSpec::mlp(2, &[10, 5], Activation::LeakyRelu { slope: 0.1 }, false),
        envelope: envelope_net(2, [20, 10]),
        active,
        rho_psi: 1e-8,
    }
}

/// Nonconvex sublevel set in the plane.
fn nonconvex_set() -> SetProblem {
    let constraint: TargetFn = Arc::new(|x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        a * a + b.powi(4) + a.powi(3) / 3.0 - b.powi(3) - 0.5 * b - 1.0
    });
    let mut active = base_active(50, 50, 1e-4);
    active.train.sign_eta = Some(10.0);
    active.err_threshold = 0.0;
    SetProblem {
        name: "nonconvex-set",
        description: "Convex inner approximation of {x : x1^2 + x2^4 + x1^3/3 \
                      - x2^3 - x2/2 <= 1} on [-2, 2]^2 via sign-smoothed \
                      regression; max-affine (10 rows) and input-convex \
                      (2 x 5 softplus) families; N0 = 50, M = 50.",
        constraint,
        input_box: Hyperbox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        max_affine: ModelSpec::plain(2, Family::MaxAffine { rows: 10 }),
        input_convex: ModelSpec::plain(2, Family::InputConvexNn { widths: vec![5, 5] }),
        active,
        epsilon_f: 1e-6,
    }
}

/// Pendulum with friction and cubic stiffness.
fn pendulum() -> SysIdProblem {
    let params = PendulumParams::default();
    let mut active = base_active(100, 50, 1e-4);
    active.err_threshold = 0.0;
    let model = ModelSpec::mlp(3, &[10], Activation::Relu, true);
    SysIdProblem {
        name: "pendulum",
        description: "Uncertain discrete-time model of a pendulum with \
                      friction and cubic stiffness; Ts = 0.1 s, Heun \
                      integration with 10 substeps; shallow ReLU nets (10 \
                      neurons) with a linear input term; ranges xi1 in \
                      [-pi, pi], xi2 in [-5, 5], u in [-2, 2] (the source \
                      prints the torque range as the degenerate [2, 2]; the \
                      symmetric range is used here).",
        ode: pendulum_ode(params),
        box_xu: Hyperbox::new(
            vec![-std::f64::consts::PI, -5.0, -2.0],
            vec![std::f64::consts::PI, 5.0, 2.0],
        )
        .unwrap(),
        state_models: vec![model.clone(), model],
        output_models: vec![],
        sysid: SysIdConfig {
            ts: 0.1,
            method: IntegrationMethod::Heun,
            substeps: 10,
            active,
            bound_direct: DirectConfig::default(),
        },
    }
}

/// Randomly generated strictly convex mpQP with a fixed internal seed.
fn random_mpqp() -> MpqpProblem {
    let n_x = 2;
    let n_z = 10;
    let m_random = 30;
    let mut r = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mat = DMatrix::from_fn(n_z, n_z, |_, _| r.gen_range(-1.0..1.0));
    let q = &mat * mat.transpose() + DMatrix::identity(n_z, n_z);
    let f_mat = DMatrix::from_fn(n_z, n_x, |_, _| r.gen_range(-1.0..1.0));
    let f_vec = DVector::from_fn(n_z, |_, _| r.gen_range(-0.5..0.5));

    // 30 random inequalities (kept feasible at z = 0 over the box) plus the
    // two-sided bounds -1 <= z_i <= 1.
    let m = m_random + 2 * n_z;
    let mut a = DMatrix::zeros(m, n_z);
    let mut b_mat = DMatrix::zeros(m, n_x);
    let mut b_vec = DVector::zeros(m);
    for i in 0..m_random {
        for j in 0..n_z {
            a[(i, j)] = r.gen_range(-1.0..1.0);
        }
        for j in 0..n_x {
            b_mat[(i, j)] = r.gen_range(-0.3..0.3);
        }
        let row_l1: f64 = (0..n_x).map(|j| b_mat[(i, j)]).map(f64::abs).sum();
        b_vec[i] = row_l1 + r.gen_range(0.05..0.5);
    }
    for i in 0..n_z {
        a[(m_random + 2 * i, i)] = 1.0;
        b_vec[m_random + 2 * i] = 1.0;
        a[(m_random + 2 * i + 1, i)] = -1.0;
        b_vec[m_random + 2 * i + 1] = 1.0;
    }
    let qp = MpQp {
        q,
        f_mat,
        f_vec,
        a,
        b_mat,
        b_vec,
        param_box: Hyperbox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
    }
    .validate()
    .expect("generated mpQP is well posed");

    let inner = ModelSpec::mlp(2, &[5, 5], Activation::Relu, true);
    let model = mpc_gated_model(&qp, inner, 1.0, MpcSat::Fixed { lo: -1.0, hi: 1.0 })
        .expect("gated model construction");
    let mut active = base_active(20, 30, 1e-8);
    active.err_threshold = 0.0;
    MpqpProblem {
        name: "random-mpqp",
        description: "Randomly generated strictly convex mpQP (fixed internal \
                      seed): x in R^2, z in R^10, 30 inequalities plus bounds \
                      |z_i| <= 1; the first solution component is approximated \
                      by a ReLU net gated on region 0 and hard-saturated to \
                      [-1, 1]; N0 = 20, M = 30.",
        qp,
        model,
        active,
        qp_tol: 1e-9,
        mpc: None,
        envelope: envelope_net(2, [10, 5]),
        rho_psi: 1e-4,
    }
}

/// Non-minimum-phase SISO plant under reference-tracking MPC.
///
/// Continuous transfer function (s - 0.5)/(s^2 + 0.4 s + 1), discretized by
/// zero-order hold at Ts = 0.5 s (the benchmark fixes this step; the exact
/// QP solved here is its own ground truth).
pub fn nonminphase_mpc_spec(horizon: usize) -> MpcSpec {
    let a_ct = DMatrix::from_row_slice(2, 2, &[-0.4, -1.0, 1.0, 0.0]);
    let b_ct = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
    let (a_d, b_d) = zoh_discretize(&a_ct, &b_ct, 0.5);
    MpcSpec {
        a: a_d,
        b: b_d,
        c,
        horizon,
        control_horizon: horizon,
        constraint_horizon: horizon,
        q_tau: DMatrix::from_element(1, 1, 1.0),
        q_du: DMatrix::from_element(1, 1, 0.1),
        rho2: 100.0,
        rho1: 0.0,
        u_min: DVector::from_vec(vec![f64::NEG_INFINITY]),
        u_max: DVector::from_vec(vec![f64::INFINITY]),
        du_min: DVector::from_vec(vec![-0.5]),
        du_max: DVector::from_vec(vec![0.5]),
        tau_min: DVector::from_vec(vec![-1.2]),
        tau_max: DVector::from_vec(vec![1.2]),
        v_min: DVector::from_vec(vec![1.0]),
        v_max: DVector::from_vec(vec![1.0]),
    }
}

pub fn mpc_nonminphase_with_horizon(horizon: usize, n_initial: usize, max_steps: usize) -> MpqpProblem {
    let spec = nonminphase_mpc_spec(horizon);
    // Region of interest; the source prints identical lower and upper
    // bounds ([-3 -3 -1 -2.5] on both sides), so the symmetric box around
    // zero with those magnitudes is used.
    let param_box = Hyperbox::new(vec![-3.0, -3.0, -1.0, -2.5], vec![3.0, 3.0, 1.0, 2.5]).unwrap();
    let qp = condense_mpc(&spec, param_box).expect("condensing the MPC spec");
    let inner = ModelSpec::mlp(4, &[20, 10], Activation::LeakyRelu { slope: 0.1 }, true);
    let model = mpc_gated_model(
        &qp,
        inner,
        1.0,
        MpcSat::PrevInputBand {
            index: 3,
            du_min: -0.5,
            du_max: 0.5,
            u_min: f64::NEG_INFINITY,
            u_max: f64::INFINITY,
        },
    )
    .expect("gated model construction");
    let mut active = base_active(n_initial, max_steps, 1e-4);
    active.train.nu = 1e-4;
    active.err_threshold = 0.0;
    MpqpProblem {
        name: "mpc-nonminphase",
        description: "Reference-tracking MPC of the non-minimum-phase plant \
                      (s - 0.5)/(s^2 + 0.4 s + 1), zero-order hold at 0.5 s; \
                      |du| <= 0.5, |tau| <= 1.2 softened by a shared slack \
                      (rho2 = 100); parameters x = (xi, r, u_prev) on \
                      [-3,3]x[-3,3]x[-1,1]x[-2.5,2.5]; gated leaky-ReLU net \
                      saturated to the admissible input band.",
        qp,
        model,
        active,
        qp_tol: 1e-9,
        mpc: Some(spec),
        envelope: envelope_net(4, [20, 10]),
        rho_psi: 1e-4,
    }
}

fn mpc_nonminphase() -> MpqpProblem {
    mpc_nonminphase_with_horizon(20, 1000, 1000)
}
