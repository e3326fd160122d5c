//! Dense convex QP solving, region-0 machinery for multiparametric QPs,
//! linear-MPC condensing and the gated/saturated approximate-MPC model.
//!
//! The solver is a primal active-set scheme on strictly convex problems:
//! start from the unconstrained optimum, add the most violated constraint,
//! drop constraints with negative multipliers (smallest index first, which
//! also serves as the anti-cycling rule). Exact active sets are what the
//! region-0 validation needs, so this is preferred over first-order methods.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::Hyperbox;
use crate::error::{Error, Result};
use crate::models::{
    AffineMap, GateSpec, IndicatorMode, IndicatorSpec, ModelSpec, ParamLayout, Surrogate,
};

/// Multiparametric QP: minimize over z of `1/2 z'Qz + (Fx + f)'z` subject to
/// `Az <= Bx + b`, with the parameter x ranging over a box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpQp {
    pub q: DMatrix<f64>,
    pub f_mat: DMatrix<f64>,
    pub f_vec: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub param_box: Hyperbox,
}

impl MpQp {
    pub fn n_z(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.f_mat.ncols()
    }

    pub fn n_con(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<Self> {
        let n = self.n_z();
        if self.q.ncols() != n || self.f_mat.nrows() != n || self.f_vec.len() != n {
            return Err(Error::dim("MpQp cost blocks", n, self.f_mat.nrows()));
        }
        let m = self.n_con();
        if self.a.ncols() != n || self.b_mat.nrows() != m || self.b_vec.len() != m {
            return Err(Error::dim("MpQp constraint blocks", m, self.b_mat.nrows()));
        }
        if self.b_mat.ncols() != self.n_x() || self.param_box.dim() != self.n_x() {
            return Err(Error::dim("MpQp parameter dim", self.n_x(), self.b_mat.ncols()));
        }
        if Cholesky::new(self.q.clone()).is_none() {
            return Err(Error::Qp("Q is not positive definite".into()));
        }
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub active_set: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub status: QpStatus,
}

/// Solves `min 1/2 z'Qz + c'z  s.t.  Az <= rhs` for strictly convex Q.
///
/// Dual active-set iteration (Goldfarb-Idnani flavor): start from the
/// unconstrained optimum, pick the most violated constraint, take the
/// shorter of the full primal step and the first blocking dual step; a
/// blocking multiplier drops its constraint (smallest index on ties) and
/// the step repeats with the reduced working set. Infeasibility shows up as
/// both step lengths infinite.
pub fn solve_qp_dense(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    tol: f64,
) -> Result<QpSolution> {
    let n = q.nrows();
    let m = a.nrows();
    let chol = Cholesky::new(q.clone()).ok_or_else(|| Error::Qp("Q not PD".into()))?;
    let mut z = -chol.solve(c);
    let mut working: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let max_outer = 10 * (m + n) + 20;
    let mut inner_budget = 50 * (m + n) + 100;

    for _outer in 0..max_outer {
        // most violated constraint (relative scaling)
        let viol = a * &z - rhs;
        let mut entering: Option<(f64, usize)> = None;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let v = viol[i] / (1.0 + rhs[i].abs());
            if v > tol && entering.map(|(w, _)| v > w).unwrap_or(true) {
                entering = Some((v, i));
            }
        }
        let Some((_, p)) = entering else {
            let lam_vec = DVector::from_vec(lam.clone());
            let kkt = kkt_residual(q, c, a, rhs, &z, &working, &lam_vec);
            let perm = argsort(&working);
            let active: Vec<usize> = perm.iter().map(|&i| working[i]).collect();
            let mults: Vec<f64> = perm.iter().map(|&i| lam[i]).collect();
            return Ok(QpSolution {
                z,
                active_set: active,
                multipliers: mults,
                kkt_residual: kkt,
                status: QpStatus::Optimal,
            });
        };

        let a_p = a.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            inner_budget = inner_budget.saturating_sub(1);
            if inner_budget == 0 {
                return Err(Error::Qp("active-set cycling guard exceeded".into()));
            }
            // step directions: dz/du = -H a_p, dlam/du = -r
            let qa = chol.solve(&a_p);
            let (h_ap, r) = if working.is_empty() {
                (qa.clone(), DVector::zeros(0))
            } else {
                let k = working.len();
                let mut a_w = DMatrix::zeros(k, n);
                for (row, &ci) in working.iter().enumerate() {
                    a_w.row_mut(row).copy_from(&a.row(ci));
                }
                let g = chol.solve(&a_w.transpose());
                let s = &a_w * &g;
                let Some(s_chol) = Cholesky::new(s) else {
                    return Err(Error::Qp("working set became rank deficient".into()));
                };
                let r = s_chol.solve(&(&a_w * &qa));
                (&qa - &g * &r, r)
            };
            let denom = a_p.dot(&h_ap);
            let s_viol = a_p.dot(&z) - rhs[p];
            let t2 = if denom > 1e-13 {
                s_viol / denom
            } else {
                f64::INFINITY
            };
            // first blocking working multiplier; Bland-style smallest
            // constraint index among the blockers
            let mut t1 = f64::INFINITY;
            let mut blocker: Option<usize> = None;
            for (j, &cj) in working.iter().enumerate() {
                if r[j] > 1e-13 {
                    let ratio = lam[j] / r[j];
                    let better = ratio < t1 - 1e-15
                        || ((ratio - t1).abs() <= 1e-15
                            && blocker.map(|b| cj < working[b]).unwrap_or(true));
                    if better {
                        t1 = ratio;
                        blocker = Some(j);
                    }
                }
            }
            if !t1.is_finite() && !t2.is_finite() {
                let lam_vec = DVector::from_vec(lam.clone());
                return Ok(QpSolution {
                    kkt_residual: kkt_residual(q, c, a, rhs, &z, &working, &lam_vec),
                    z,
                    active_set: working,
                    multipliers: lam,
                    status: QpStatus::Infeasible,
                });
            }
            let t = t1.min(t2);
            if t.is_finite() && t > 0.0 {
                z -= &h_ap * t;
                for (j, l) in lam.iter_mut().enumerate() {
                    *l -= t * r[j];
                }
                u_p += t;
            }
            if t2 <= t1 {
                working.push(p);
                lam.push(u_p);
                break;
            }
            let j = blocker.expect("finite t1 has a blocker");
            working.remove(j);
            lam.remove(j);
        }
    }
    Err(Error::Qp("active-set iteration limit exceeded".into()))
}

fn argsort(v: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by_key(|&i| v[i]);
    idx
}

fn kkt_residual(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    z: &DVector<f64>,
    working: &[usize],
    lambda: &DVector<f64>,
) -> f64 {
    let mut grad = q * z + c;
    for (i, &ci) in working.iter().enumerate() {
        grad += a.row(ci).transpose() * lambda[i];
    }
    let c_scale = 1.0 + c.amax();
    let rhs_scale = 1.0 + rhs.amax();
    let stationarity = grad.amax() / c_scale;
    let viol = a * z - rhs;
    let primal = viol.iter().fold(0.0f64, |acc, v| acc.max(*v)) / rhs_scale;
    let dual = lambda.iter().fold(0.0f64, |acc, l| acc.max(-*l));
    let comp = working
        .iter()
        .enumerate()
        .map(|(i, &ci)| (lambda[i] * viol[ci]).abs())
        .fold(0.0f64, f64::max)
        / rhs_scale;
    stationarity.max(primal).max(dual).max(comp)
}

/// Solves the mpQP at a given parameter value.
pub fn solve_qp(prob: &MpQp, x: &[f64], tol: f64) -> Result<QpSolution> {
    if x.len() != prob.n_x() {
        return Err(Error::dim("solve_qp parameter", prob.n_x(), x.len()));
    }
    let xv = DVector::from_column_slice(x);
    let c = &prob.f_mat * &xv + &prob.f_vec;
    let rhs = &prob.b_mat * &xv + &prob.b_vec;
    solve_qp_dense(&prob.q, &c, &prob.a, &rhs, tol)
}

/// Affine law of the unconstrained optimum's first component:
/// `w(x) = -e1' Q^{-1} (Fx + f)`, precomputed as a row and offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnconstrainedLaw {
    pub row: Vec<f64>,
    pub offset: f64,
}

impl UnconstrainedLaw {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.row.iter().zip(x).map(|(r, xi)| r * xi).sum::<f64>() + self.offset
    }
}

pub fn unconstrained_law(prob: &MpQp) -> Result<UnconstrainedLaw> {
    let chol =
        Cholesky::new(prob.q.clone()).ok_or_else(|| Error::Qp("Q not PD".into()))?;
    let mut e1 = DVector::zeros(prob.n_z());
    e1[0] = 1.0;
    let q1 = chol.solve(&e1);
    let row = -(prob.f_mat.transpose() * &q1);
    let offset = -q1.dot(&prob.f_vec);
    Ok(UnconstrainedLaw {
        row: row.iter().copied().collect(),
        offset,
    })
}

/// First component of the unconstrained solution at x.
pub fn unconstrained_row(prob: &MpQp, x: &[f64]) -> Result<f64> {
    Ok(unconstrained_law(prob)?.eval(x))
}

/// Region of the parameter space where no constraint is active, in both the
/// full and a minimal hyperplane representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cr0 {
    pub h: DMatrix<f64>,
    pub k: DVector<f64>,
    pub h_min: DMatrix<f64>,
    pub k_min: DVector<f64>,
    /// Row indices of the full representation kept in the minimal one.
    pub kept_rows: Vec<usize>,
}

impl Cr0 {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let xv = DVector::from_column_slice(x);
        let v = &self.h_min * &xv - &self.k_min;
        v.iter().all(|vi| *vi <= tol)
    }
}

/// Computes CR0 = {x : H0 x <= K0} with `H0 = -A Q^{-1} F - B` and
/// `K0 = b + A Q^{-1} f`, and removes redundant rows. Row i is redundant iff
/// maximizing `H0_i x` subject to the remaining rows stays below `K0_i`; the
/// small LPs are solved with the QP solver under a tiny quadratic
/// regularization, so unbounded directions show up as very large optima and
/// keep the row.
pub fn cr0(prob: &MpQp) -> Result<Cr0> {
    let chol =
        Cholesky::new(prob.q.clone()).ok_or_else(|| Error::Qp("Q not PD".into()))?;
    let qinv_f = chol.solve(&prob.f_mat);
    let qinv_f_vec = chol.solve(&prob.f_vec);
    let h = -(&prob.a * &qinv_f) - &prob.b_mat;
    let k = &prob.b_vec + &prob.a * &qinv_f_vec;

    let m = h.nrows();
    let n_x = h.ncols();
    let rho = 1e-8;
    let redundancy_tol = 1e-9;
    let mut kept: Vec<usize> = (0..m).collect();
    let mut i_pos = 0usize;
    while i_pos < kept.len() {
        let i = kept[i_pos];
        let row_i = h.row(i);
        let row_norm = row_i.amax();
        if row_norm == 0.0 {
            // constant row: 0 <= K0_i is either vacuous or infeasible
            if k[i] >= 0.0 {
                kept.remove(i_pos);
            } else {
                i_pos += 1;
            }
            continue;
        }
        let others: Vec<usize> = kept.iter().copied().filter(|&j| j != i).collect();
        if others.is_empty() {
            i_pos += 1;
            continue;
        }
        let mut a_sub = DMatrix::zeros(others.len(), n_x);
        let mut rhs_sub = DVector::zeros(others.len());
        for (r, &j) in others.iter().enumerate() {
            a_sub.row_mut(r).copy_from(&h.row(j));
            rhs_sub[r] = k[j];
        }
        let q_reg = DMatrix::identity(n_x, n_x) * rho;
        let c = -row_i.transpose();
        let sol = solve_qp_dense(&q_reg, &c, &a_sub, &rhs_sub, 1e-10)?;
        let reachable = match sol.status {
            QpStatus::Optimal => row_i.transpose().dot(&sol.z),
            // remaining rows inconsistent: row i cannot be reached at all
            QpStatus::Infeasible => f64::NEG_INFINITY,
        };
        if reachable <= k[i] + redundancy_tol * (1.0 + k[i].abs()) {
            kept.remove(i_pos);
        } else {
            i_pos += 1;
        }
    }

    let mut h_min = DMatrix::zeros(kept.len(), n_x);
    let mut k_min = DVector::zeros(kept.len());
    for (r, &j) in kept.iter().enumerate() {
        h_min.row_mut(r).copy_from(&h.row(j));
        k_min[r] = k[j];
    }
    Ok(Cr0 {
        h,
        k,
        h_min,
        k_min,
        kept_rows: kept,
    })
}

/// Reference-tracking linear MPC description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Prediction horizon N.
    pub horizon: usize,
    /// Number of free control moves N_u.
    pub control_horizon: usize,
    /// Number of constrained output steps N_c.
    pub constraint_horizon: usize,
    pub q_tau: DMatrix<f64>,
    pub q_du: DMatrix<f64>,
    pub rho2: f64,
    pub rho1: f64,
    /// Input bounds; +-infinity entries are skipped.
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub du_min: DVector<f64>,
    pub du_max: DVector<f64>,
    pub tau_min: DVector<f64>,
    pub tau_max: DVector<f64>,
    /// ECR softening weights for the output constraints.
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
}

impl MpcSpec {
    pub fn n_state(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_input(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_output(&self) -> usize {
        self.c.nrows()
    }

    /// Parameter dimension of the condensed mpQP: x = (xi_0, r, u_{-1}).
    pub fn n_param(&self) -> usize {
        self.n_state() + self.n_output() + self.n_input()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < self.control_horizon || self.control_horizon == 0 {
            return Err(Error::InvalidArgument(
                "need N >= N_u >= 1 for the MPC horizons".into(),
            ));
        }
        if self.horizon < self.constraint_horizon || self.constraint_horizon == 0 {
            return Err(Error::InvalidArgument(
                "need N >= N_c >= 1 for the MPC horizons".into(),
            ));
        }
        if self.rho2 < 0.0 || self.rho1 < 0.0 {
            return Err(Error::InvalidArgument("slack weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Splits the condensed parameter vector into (xi0, r, u_prev).
fn split_param<'a>(spec: &MpcSpec, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
    let (xi, rest) = x.split_at(spec.n_state());
    let (r, u_prev) = rest.split_at(spec.n_output());
    (xi, r, u_prev)
}

/// Builds the condensed mpQP of the reference-tracking MPC problem by
/// eliminating the states through the prediction equations.
pub fn condense_mpc(spec: &MpcSpec, param_box: Hyperbox) -> Result<MpQp> {
    spec.validate()?;
    let n_xi = spec.n_state();
    let n_u = spec.n_input();
    let n_tau = spec.n_output();
    let big_n = spec.horizon;
    let n_uh = spec.control_horizon;
    let n_c = spec.constraint_horizon;
    let nu_tot = n_uh * n_u;
    let n_z = nu_tot + 1; // plus the shared slack
    let n_x = spec.n_param();
    if param_box.dim() != n_x {
        return Err(Error::dim("MPC parameter box", n_x, param_box.dim()));
    }

    // Powers of A and the input-to-output prediction blocks.
    let mut a_pow = Vec::with_capacity(big_n + 1);
    a_pow.push(DMatrix::identity(n_xi, n_xi));
    for k in 1..=big_n {
        let next = &a_pow[k - 1] * &spec.a;
        a_pow.push(next);
    }

    // tau_k = C (A^k xi0 + sum_{j<k} A^{k-1-j} B u_eff(j)), eff(j) = min(j, N_u-1)
    let mut m_xi = DMatrix::zeros(big_n * n_tau, n_xi);
    let mut m_u = DMatrix::zeros(big_n * n_tau, nu_tot);
    for k in 1..=big_n {
        let row0 = (k - 1) * n_tau;
        let c_ak = &spec.c * &a_pow[k];
        m_xi.view_mut((row0, 0), (n_tau, n_xi)).copy_from(&c_ak);
        for j in 0..k {
            let eff = j.min(n_uh - 1);
            let block = &spec.c * &a_pow[k - 1 - j] * &spec.b;
            let mut target = m_u.view_mut((row0, eff * n_u), (n_tau, n_u));
            target += block;
        }
    }

    // Block-diagonal weights and the difference operator Delta u = D u - E u_prev.
    let mut q_tau_bar = DMatrix::zeros(big_n * n_tau, big_n * n_tau);
    for k in 0..big_n {
        q_tau_bar
            .view_mut((k * n_tau, k * n_tau), (n_tau, n_tau))
            .copy_from(&spec.q_tau);
    }
    let mut q_du_bar = DMatrix::zeros(nu_tot, nu_tot);
    for k in 0..n_uh {
        q_du_bar
            .view_mut((k * n_u, k * n_u), (n_u, n_u))
            .copy_from(&spec.q_du);
    }
    let mut d_op = DMatrix::zeros(nu_tot, nu_tot);
    for k in 0..n_uh {
        for i in 0..n_u {
            d_op[(k * n_u + i, k * n_u + i)] = 1.0;
            if k > 0 {
                d_op[(k * n_u + i, (k - 1) * n_u + i)] = -1.0;
            }
        }
    }
    let mut e_op = DMatrix::zeros(nu_tot, n_u);
    for i in 0..n_u {
        e_op[(i, i)] = 1.0;
    }

    // Quadratic cost.
    let q_uu = 2.0
        * (m_u.transpose() * &q_tau_bar * &m_u + d_op.transpose() * &q_du_bar * &d_op);
    let mut q = DMatrix::zeros(n_z, n_z);
    q.view_mut((0, 0), (nu_tot, nu_tot)).copy_from(&q_uu);
    q[(nu_tot, nu_tot)] = if spec.rho2 > 0.0 { 2.0 * spec.rho2 } else { 1e-9 };

    // Linear cost F x + f with x = (xi0, r, u_prev).
    let mut f_mat = DMatrix::zeros(n_z, n_x);
    let two_mu_qt = 2.0 * m_u.transpose() * &q_tau_bar;
    f_mat
        .view_mut((0, 0), (nu_tot, n_xi))
        .copy_from(&(&two_mu_qt * &m_xi));
    // stacked reference (1_N (x) I) maps r to every step
    let mut r_stack = DMatrix::zeros(big_n * n_tau, n_tau);
    for k in 0..big_n {
        r_stack
            .view_mut((k * n_tau, 0), (n_tau, n_tau))
            .copy_from(&DMatrix::identity(n_tau, n_tau));
    }
    f_mat
        .view_mut((0, n_xi), (nu_tot, n_tau))
        .copy_from(&(-(&two_mu_qt * &r_stack)));
    f_mat
        .view_mut((0, n_xi + n_tau), (nu_tot, n_u))
        .copy_from(&(-2.0 * d_op.transpose() * &q_du_bar * &e_op));
    let mut f_vec = DVector::zeros(n_z);
    f_vec[nu_tot] = spec.rho1;

    // Constraints A z <= B x + b.
    let mut rows_a: Vec<DVector<f64>> = Vec::new();
    let mut rows_b: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push_row = |a_row: DVector<f64>, b_row: DVector<f64>, b_val: f64| {
        rows_a.push(a_row);
        rows_b.push(b_row);
        rhs.push(b_val);
    };

    for k in 0..n_uh {
        for i in 0..n_u {
            if spec.u_max[i].is_finite() {
                let mut ar = DVector::zeros(n_z);
                ar[k * n_u + i] = 1.0;
                push_row(ar, DVector::zeros(n_x), spec.u_max[i]);
            }
            if spec.u_min[i].is_finite() {
                let mut ar = DVector::zeros(n_z);
                ar[k * n_u + i] = -1.0;
                push_row(ar, DVector::zeros(n_x), -spec.u_min[i]);
            }
        }
    }
    for k in 0..n_uh {
        for i in 0..n_u {
            if spec.du_max[i].is_finite() {
                let mut ar = DVector::zeros(n_z);
                ar[k * n_u + i] = 1.0;
                let mut br = DVector::zeros(n_x);
                if k > 0 {
                    ar[(k - 1) * n_u + i] = -1.0;
                } else {
                    br[n_xi + n_tau + i] = 1.0;
                }
                push_row(ar, br, spec.du_max[i]);
            }
            if spec.du_min[i].is_finite() {
                let mut ar = DVector::zeros(n_z);
                ar[k * n_u + i] = -1.0;
                let mut br = DVector::zeros(n_x);
                if k > 0 {
                    ar[(k - 1) * n_u + i] = 1.0;
                } else {
                    br[n_xi + n_tau + i] = -1.0;
                }
                push_row(ar, br, -spec.du_min[i]);
            }
        }
    }
    for k in 1..=n_c {
        let row0 = (k - 1) * n_tau;
        for i in 0..n_tau {
            let u_row = m_u.row(row0 + i);
            let xi_row = m_xi.row(row0 + i);
            if spec.tau_max[i].is_finite() {
                let mut ar = DVector::zeros(n_z);
                for j in 0..nu_tot {
                    ar[j] = u_row[j];
                }
                ar[nu_tot] = -spec.v_max[i];
                let mut br = DVector::zeros(n_x);
                for j in 0..n_xi {
                    br[j] = -xi_row[j];
                }
                push_row(ar, br, spec.tau_max[i]);
            }
            if spec.tau_min[i].is_finite() {
                let mut ar = DVector::zeros(n_z);
                for j in 0..nu_tot {
                    ar[j] = -u_row[j];
                }
                ar[nu_tot] = -spec.v_min[i];
                let mut br = DVector::zeros(n_x);
                for j in 0..n_xi {
                    br[j] = xi_row[j];
                }
                push_row(ar, br, -spec.tau_min[i]);
            }
        }
    }
    // zeta >= 0
    {
        let mut ar = DVector::zeros(n_z);
        ar[nu_tot] = -1.0;
        push_row(ar, DVector::zeros(n_x), 0.0);
    }

    let m = rows_a.len();
    let mut a = DMatrix::zeros(m, n_z);
    let mut b_mat = DMatrix::zeros(m, n_x);
    let mut b_vec = DVector::zeros(m);
    for (r, ((ar, br), bv)) in rows_a
        .into_iter()
        .zip(rows_b.into_iter())
        .zip(rhs.into_iter())
        .enumerate()
    {
        a.row_mut(r).copy_from(&ar.transpose());
        b_mat.row_mut(r).copy_from(&br.transpose());
        b_vec[r] = bv;
    }

    MpQp {
        q,
        f_mat,
        f_vec,
        a,
        b_mat,
        b_vec,
        param_box,
    }
    .validate()
}

/// Stage-wise evaluation of the MPC cost by simulating the prediction
/// equations; the independent oracle for the condensed quadratic.
pub fn mpc_stage_cost(spec: &MpcSpec, x: &[f64], z: &[f64]) -> f64 {
    let n_u = spec.n_input();
    let (xi0, r, u_prev) = split_param(spec, x);
    let zeta = z[spec.control_horizon * n_u];
    let r = DVector::from_column_slice(r);
    let mut xi = DVector::from_column_slice(xi0);
    let mut cost = spec.rho2 * zeta * zeta + spec.rho1 * zeta;
    let mut prev = DVector::from_column_slice(u_prev);
    for k in 0..spec.horizon {
        let eff = k.min(spec.control_horizon - 1);
        let u_k = DVector::from_column_slice(&z[eff * n_u..(eff + 1) * n_u]);
        if k < spec.control_horizon {
            let du = &u_k - &prev;
            cost += (du.transpose() * &spec.q_du * &du)[(0, 0)];
            prev = u_k.clone();
        }
        xi = &spec.a * &xi + &spec.b * &u_k;
        let tau = &spec.c * &xi;
        let err = &tau - &r;
        cost += (err.transpose() * &spec.q_tau * &err)[(0, 0)];
    }
    cost
}

/// Stage-wise constraint check; the independent oracle for the condensed
/// constraint rows. Returns the largest violation (<= 0 means feasible).
pub fn mpc_stage_violation(spec: &MpcSpec, x: &[f64], z: &[f64]) -> f64 {
    let n_u = spec.n_input();
    let (xi0, _r, u_prev) = split_param(spec, x);
    let zeta = z[spec.control_horizon * n_u];
    let mut worst = -zeta; // zeta >= 0
    let mut xi = DVector::from_column_slice(xi0);
    let mut prev = DVector::from_column_slice(u_prev);
    for k in 0..spec.horizon {
        let eff = k.min(spec.control_horizon - 1);
        let u_k = DVector::from_column_slice(&z[eff * n_u..(eff + 1) * n_u]);
        if k < spec.control_horizon {
            for i in 0..n_u {
                if spec.u_max[i].is_finite() {
                    worst = worst.max(u_k[i] - spec.u_max[i]);
                }
                if spec.u_min[i].is_finite() {
                    worst = worst.max(spec.u_min[i] - u_k[i]);
                }
                if spec.du_max[i].is_finite() {
                    worst = worst.max(u_k[i] - prev[i] - spec.du_max[i]);
                }
                if spec.du_min[i].is_finite() {
                    worst = worst.max(spec.du_min[i] - (u_k[i] - prev[i]));
                }
            }
            prev = u_k.clone();
        }
        xi = &spec.a * &xi + &spec.b * &u_k;
        if k + 1 <= spec.constraint_horizon {
            let tau = &spec.c * &xi;
            for i in 0..spec.n_output() {
                if spec.tau_max[i].is_finite() {
                    worst = worst.max(tau[i] - spec.tau_max[i] - spec.v_max[i] * zeta);
                }
                if spec.tau_min[i].is_finite() {
                    worst = worst.max(spec.tau_min[i] - spec.v_min[i] * zeta - tau[i]);
                }
            }
        }
    }
    worst
}

/// Saturation bounds of the approximate-MPC model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MpcSat {
    /// Fixed interval.
    Fixed { lo: f64, hi: f64 },
    /// Per-parameter band from the previous input component of x:
    /// [max(u_min, x_i + du_min), min(u_max, x_i + du_max)].
    PrevInputBand {
        index: usize,
        du_min: f64,
        du_max: f64,
        u_min: f64,
        u_max: f64,
    },
}

impl MpcSat {
    fn bounds(&self, x: &[f64]) -> (f64, f64) {
        match self {
            MpcSat::Fixed { lo, hi } => (*lo, *hi),
            MpcSat::PrevInputBand {
                index,
                du_min,
                du_max,
                u_min,
                u_max,
            } => {
                let u_prev = x[*index];
                ((u_prev + du_min).max(*u_min), (u_prev + du_max).min(*u_max))
            }
        }
    }
}

/// Gated and saturated approximate-MPC model: equals the unconstrained
/// affine law exactly on (the minimal representation of) region 0, blends
/// into a trained network outside it, and clamps the output to the
/// admissible input band. The gate steepness beta is trainable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatedMpcModel {
    /// Inner network with the region-0 gate attached (no saturation).
    pub gated: ModelSpec,
    pub sat: MpcSat,
}

pub fn mpc_gated_model(
    prob: &MpQp,
    inner: ModelSpec,
    beta0: f64,
    sat: MpcSat,
) -> Result<GatedMpcModel> {
    if inner.input_dim != prob.n_x() {
        return Err(Error::dim("gated model input", prob.n_x(), inner.input_dim));
    }
    if inner.gate.is_some() || inner.saturation.is_some() {
        return Err(Error::InvalidArgument(
            "inner model must be a bare family".into(),
        ));
    }
    let region = cr0(prob)?;
    let law = unconstrained_law(prob)?;
    let rows: Vec<Vec<f64>> = region
        .h_min
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let offsets: Vec<f64> = region.k_min.iter().map(|k| -k).collect();
    let indicator = IndicatorSpec {
        mode: IndicatorMode::Pwa,
        g: AffineMap::new(rows, offsets)?,
        h: AffineMap::empty(),
        beta: beta0,
        trainable: true,
    };
    let gated = ModelSpec {
        input_dim: inner.input_dim,
        family: inner.family,
        gate: Some(GateSpec {
            indicator,
            w_weights: law.row.clone(),
            w_offset: law.offset,
        }),
        saturation: None,
    };
    gated.validate()?;
    Ok(GatedMpcModel { gated, sat })
}

impl Surrogate for GatedMpcModel {
    fn input_dim(&self) -> usize {
        self.gated.input_dim
    }

    fn num_params(&self) -> usize {
        self.gated.num_params()
    }

    fn layout(&self) -> ParamLayout {
        self.gated.layout()
    }

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.gated.init_params(rng)
    }

    fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        let y = self.gated.eval(theta, x)?;
        let (lo, hi) = self.sat.bounds(x);
        Ok(y.max(lo).min(hi))
    }

    fn eval_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        seed: f64,
        grad_theta: &mut [f64],
        grad_x: &mut [f64],
    ) -> Result<f64> {
        let y = self.gated.eval(theta, x)?;
        let (lo, hi) = self.sat.bounds(x);
        if y > lo && y < hi {
            self.gated.eval_grad(theta, x, seed, grad_theta, grad_x)?;
            Ok(y)
        } else {
            // saturated: zero sensitivity to theta; the bound's own x
            // dependence is piecewise constant or comes through u_prev
            if let MpcSat::PrevInputBand {
                index,
                du_min,
                du_max,
                u_min,
                u_max,
            } = &self.sat
            {
                let u_prev = x[*index];
                if y <= lo && u_prev + du_min > *u_min {
                    grad_x[*index] += seed;
                }
                if y >= hi && u_prev + du_max < *u_max {
                    grad_x[*index] += seed;
                }
            }
            Ok(y.max(lo).min(hi))
        }
    }
}

/// Closed-loop trajectory record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub tau: Vec<f64>,
    pub r: Vec<f64>,
}

/// Simulates the closed loop of a scalar-input plant under a controller that
/// maps the condensed parameter x = (xi, r, u_prev) to the applied input.
pub fn simulate_closed_loop<C>(
    spec: &MpcSpec,
    controller: &C,
    xi0: &[f64],
    u_prev0: f64,
    reference: &[f64],
    ts: f64,
) -> Result<Trajectory>
where
    C: Fn(&[f64]) -> Result<f64>,
{
    if spec.n_input() != 1 || spec.n_output() != 1 {
        return Err(Error::InvalidArgument(
            "closed-loop simulation covers single-input single-output plants".into(),
        ));
    }
    let mut xi = DVector::from_column_slice(xi0);
    let mut u_prev = u_prev0;
    let mut out = Trajectory {
        t: Vec::new(),
        xi: Vec::new(),
        u: Vec::new(),
        tau: Vec::new(),
        r: Vec::new(),
    };
    for (k, &rk) in reference.iter().enumerate() {
        let mut x: Vec<f64> = xi.iter().copied().collect();
        x.push(rk);
        x.push(u_prev);
        let u = controller(&x)?;
        if !u.is_finite() {
            return Err(Error::non_finite(format!("controller output at step {k}")));
        }
        xi = &spec.a * &xi + &spec.b * DVector::from_element(1, u);
        let tau = (&spec.c * &xi)[0];
        out.t.push(k as f64 * ts);
        out.xi.push(xi.iter().copied().collect());
        out.u.push(u);
        out.tau.push(tau);
        out.r.push(rk);
        u_prev = u;
    }
    Ok(out)
}

/// Matrix exponential by scaling and squaring of the Taylor series; intended
/// for the small matrices of zero-order-hold discretization.
fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.amax();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2.0f64.powi(s as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Zero-order-hold discretization of a continuous-time pair (A, B) at the
/// given sampling time, via the augmented matrix exponential.
pub fn zoh_discretize(
    a_ct: &DMatrix<f64>,
    b_ct: &DMatrix<f64>,
    ts: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a_ct.nrows();
    let m = b_ct.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a_ct);
    aug.view_mut((0, n), (n, m)).copy_from(b_ct);
    let e = expm(&(aug * ts));
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    (ad, bd)
}

#[cfg(test)]
mod tests;
