use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{Activation, ModelSpec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force oracle: enumerate every candidate active set, solve the
/// equality-constrained KKT system, keep feasible points with nonnegative
/// multipliers, return the lowest-objective candidate.
fn brute_force_qp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<(DVector<f64>, Vec<usize>)> {
    let n = q.nrows();
    let m = a.nrows();
    let mut best: Option<(f64, DVector<f64>, Vec<usize>)> = None;
    for mask in 0u32..(1 << m) {
        let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if subset.len() > n {
            continue;
        }
        let k = subset.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(q);
        for (r, &ci) in subset.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(ci, j)];
                kkt[(j, n + r)] = a[(ci, j)];
            }
        }
        let mut rhs_kkt = DVector::zeros(n + k);
        for j in 0..n {
            rhs_kkt[j] = -c[j];
        }
        for (r, &ci) in subset.iter().enumerate() {
            rhs_kkt[n + r] = rhs[ci];
        }
        let Some(sol) = kkt.lu().solve(&rhs_kkt) else {
            continue;
        };
        let z = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, k).into_owned();
        let feasible = (a * &z - rhs).iter().all(|v| *v <= 1e-8);
        let dual_ok = lambda.iter().all(|l| *l >= -1e-8);
        if feasible && dual_ok {
            let obj = 0.5 * (z.transpose() * q * &z)[(0, 0)] + c.dot(&z);
            if best.as_ref().map(|(b, _, _)| obj < *b).unwrap_or(true) {
                best = Some((obj, z, subset));
            }
        }
    }
    best.map(|(_, z, s)| (z, s))
}

#[test]
fn unconstrained_optimum_when_nothing_active() {
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
    let c = DVector::from_vec(vec![-2.0, 4.0]);
    // loose constraints
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let rhs = DVector::from_vec(vec![100.0]);
    let sol = solve_qp_dense(&q, &c, &a, &rhs, 1e-10).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!(sol.active_set.is_empty());
    assert!((sol.z[0] - 1.0).abs() < 1e-12);
    assert!((sol.z[1] + 1.0).abs() < 1e-12);
    assert!(sol.kkt_residual <= 1e-10);
}

#[test]
fn scalar_bound_with_known_multiplier() {
    // min 1/2 z^2 - z  s.t.  z <= 0.5  ->  z* = 0.5, lambda = 0.5
    let q = DMatrix::from_element(1, 1, 1.0);
    let c = DVector::from_vec(vec![-1.0]);
    let a = DMatrix::from_element(1, 1, 1.0);
    let rhs = DVector::from_vec(vec![0.5]);
    let sol = solve_qp_dense(&q, &c, &a, &rhs, 1e-10).unwrap();
    assert_eq!(sol.active_set, vec![0]);
    assert!((sol.z[0] - 0.5).abs() < 1e-12);
    assert!((sol.multipliers[0] - 0.5).abs() < 1e-12);
}

fn random_dense_qp(r: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let mat = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let q = &mat * mat.transpose() + DMatrix::identity(n, n) * 0.5;
    let c = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, n, |_, _| r.gen_range(-1.0..1.0));
    // keep z = 0 strictly feasible so the problem is never infeasible
    let rhs = DVector::from_fn(m, |_, _| r.gen_range(0.05..1.0));
    (q, c, a, rhs)
}

#[test]
fn random_qps_match_brute_force_enumeration() {
    let mut r = rng(42);
    for trial in 0..200 {
        let n = r.gen_range(1..=5);
        let m = r.gen_range(1..=8);
        let (q, c, a, rhs) = random_dense_qp(&mut r, n, m);
        let sol = solve_qp_dense(&q, &c, &a, &rhs, 1e-10).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
        assert!(sol.kkt_residual <= 1e-8, "trial {trial}: kkt {}", sol.kkt_residual);
        let (z_oracle, _) = brute_force_qp(&q, &c, &a, &rhs).expect("oracle found optimum");
        for j in 0..n {
            assert!(
                (sol.z[j] - z_oracle[j]).abs() <= 1e-8,
                "trial {trial} z[{j}]: {} vs {}",
                sol.z[j],
                z_oracle[j]
            );
        }
    }
}

#[test]
fn infeasible_problem_is_detected() {
    // z <= -1 and -z <= -1 cannot hold together
    let q = DMatrix::from_element(1, 1, 1.0);
    let c = DVector::from_vec(vec![0.0]);
    let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let rhs = DVector::from_vec(vec![-1.0, -1.0]);
    let sol = solve_qp_dense(&q, &c, &a, &rhs, 1e-10).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
}

fn random_mpqp(seed: u64, n_x: usize, n_z: usize, m: usize) -> MpQp {
    let mut r = rng(seed);
    let mat = DMatrix::from_fn(n_z, n_z, |_, _| r.gen_range(-1.0..1.0));
    let q = &mat * mat.transpose() + DMatrix::identity(n_z, n_z);
    let f_mat = DMatrix::from_fn(n_z, n_x, |_, _| r.gen_range(-1.0..1.0));
    let f_vec = DVector::from_fn(n_z, |_, _| r.gen_range(-0.5..0.5));
    let a = DMatrix::from_fn(m, n_z, |_, _| r.gen_range(-1.0..1.0));
    let b_mat = DMatrix::from_fn(m, n_x, |_, _| r.gen_range(-0.3..0.3));
    // b_i >= ||B_i||_1 + margin keeps z = 0 feasible over the unit box
    let b_vec = DVector::from_fn(m, |i, _| {
        let row_l1: f64 = (0..n_x).map(|j| b_mat[(i, j)]).map(f64::abs).sum();
        row_l1 + r.gen_range(0.1..0.6)
    });
    MpQp {
        q,
        f_mat,
        f_vec,
        a,
        b_mat,
        b_vec,
        param_box: Hyperbox::new(vec![-1.0; n_x], vec![1.0; n_x]).unwrap(),
    }
    .validate()
    .unwrap()
}

#[test]
fn unconstrained_law_matches_full_solve_inside_cr0() {
    let prob = random_mpqp(7, 2, 5, 12);
    let law = unconstrained_law(&prob).unwrap();
    let region = cr0(&prob).unwrap();
    let mut r = rng(8);
    let mut inside_checked = 0;
    let mut outside_checked = 0;
    while inside_checked < 200 || outside_checked < 200 {
        let x = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let sol = solve_qp(&prob, &x, 1e-10).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        if region.contains(&x, 0.0) {
            // empty active set and z1 equal to the affine law
            assert!(sol.active_set.is_empty(), "x = {x:?}");
            assert!((sol.z[0] - law.eval(&x)).abs() <= 1e-8);
            inside_checked += 1;
        } else {
            assert!(!sol.active_set.is_empty(), "x = {x:?}");
            outside_checked += 1;
        }
        if inside_checked + outside_checked > 20_000 {
            panic!("sampling failed to cover both sides");
        }
    }
}

#[test]
fn cr0_contains_origin_iff_b_nonnegative() {
    // with f = 0 the unconstrained solution at x = 0 is z = 0, so
    // 0 in CR0 iff b >= 0
    let mut prob = random_mpqp(9, 2, 4, 6);
    prob.f_vec = DVector::zeros(4);
    let region = cr0(&prob).unwrap();
    let w = unconstrained_row(&prob, &[0.0, 0.0]).unwrap();
    assert_eq!(w, 0.0);
    let b_nonneg = prob.b_vec.iter().all(|b| *b >= 0.0);
    assert_eq!(region.contains(&[0.0, 0.0], 1e-12), b_nonneg);
}

#[test]
fn cr0_minimal_representation_drops_redundant_rows() {
    let prob = random_mpqp(11, 2, 4, 8);
    let region = cr0(&prob).unwrap();
    assert!(region.kept_rows.len() <= region.h.nrows());
    // the minimal and full representations describe the same set
    let mut r = rng(12);
    for _ in 0..2000 {
        let x = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
        let xv = DVector::from_column_slice(&x);
        let full = (&region.h * &xv - &region.k).iter().all(|v| *v <= 1e-9);
        let minimal = (&region.h_min * &xv - &region.k_min)
            .iter()
            .all(|v| *v <= 1e-9);
        assert_eq!(full, minimal, "x = {x:?}");
    }
    // an explicitly duplicated constraint must be removed
    let mut dup = prob.clone();
    let m0 = dup.a.nrows();
    let mut a_new = DMatrix::zeros(m0 + 1, dup.a.ncols());
    a_new.view_mut((0, 0), (m0, dup.a.ncols())).copy_from(&dup.a);
    a_new.row_mut(m0).copy_from(&dup.a.row(0).into_owned());
    let mut b_new = DMatrix::zeros(m0 + 1, dup.b_mat.ncols());
    b_new
        .view_mut((0, 0), (m0, dup.b_mat.ncols()))
        .copy_from(&dup.b_mat);
    b_new.row_mut(m0).copy_from(&dup.b_mat.row(0).into_owned());
    dup.a = a_new;
    dup.b_mat = b_new;
    let mut bv: Vec<f64> = dup.b_vec.iter().copied().collect();
    bv.push(dup.b_vec[0]);
    dup.b_vec = DVector::from_vec(bv);
    let dup_region = cr0(&dup).unwrap();
    assert!(dup_region.kept_rows.len() <= region.kept_rows.len());
    assert!(!(dup_region.kept_rows.contains(&m0) && dup_region.kept_rows.contains(&0)));
}

fn toy_mpc_spec(horizon: usize) -> MpcSpec {
    // stable 2-state SISO plant
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
    let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.05]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    MpcSpec {
        a,
        b,
        c,
        horizon,
        control_horizon: horizon,
        constraint_horizon: horizon,
        q_tau: DMatrix::from_element(1, 1, 1.0),
        q_du: DMatrix::from_element(1, 1, 0.1),
        rho2: 50.0,
        rho1: 0.0,
        u_min: DVector::from_vec(vec![f64::NEG_INFINITY]),
        u_max: DVector::from_vec(vec![f64::INFINITY]),
        du_min: DVector::from_vec(vec![-0.4]),
        du_max: DVector::from_vec(vec![0.4]),
        tau_min: DVector::from_vec(vec![-1.1]),
        tau_max: DVector::from_vec(vec![1.1]),
        v_min: DVector::from_vec(vec![1.0]),
        v_max: DVector::from_vec(vec![1.0]),
    }
}

fn mpc_param_box(spec: &MpcSpec) -> Hyperbox {
    Hyperbox::new(vec![-2.0; spec.n_param()], vec![2.0; spec.n_param()]).unwrap()
}

#[test]
fn condensed_cost_matches_stage_simulation() {
    let spec = toy_mpc_spec(5);
    let prob = condense_mpc(&spec, mpc_param_box(&spec)).unwrap();
    let mut r = rng(21);
    for _ in 0..200 {
        let x: Vec<f64> = (0..spec.n_param()).map(|_| r.gen_range(-1.5..1.5)).collect();
        let z: Vec<f64> = (0..prob.n_z())
            .map(|i| {
                if i + 1 == prob.n_z() {
                    r.gen_range(0.0..0.5)
                } else {
                    r.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let zv = DVector::from_column_slice(&z);
        let xv = DVector::from_column_slice(&x);
        let condensed = 0.5 * (zv.transpose() * &prob.q * &zv)[(0, 0)]
            + (&prob.f_mat * &xv + &prob.f_vec).dot(&zv);
        let full = mpc_stage_cost(&spec, &x, &z);
        let offset = mpc_stage_cost(&spec, &x, &vec![0.0; z.len()]);
        let scale = 1.0 + full.abs().max(offset.abs());
        assert!(
            (condensed - (full - offset)).abs() <= 1e-9 * scale,
            "condensed {condensed} vs stage {}",
            full - offset
        );
    }
}

#[test]
fn condensed_constraints_match_stage_simulation() {
    let spec = toy_mpc_spec(4);
    let prob = condense_mpc(&spec, mpc_param_box(&spec)).unwrap();
    let mut r = rng(22);
    let mut seen_feasible = 0;
    let mut seen_infeasible = 0;
    for trial in 0..400 {
        // alternate wild draws with smooth low-amplitude input sequences so
        // both feasible and infeasible samples occur
        let smooth = trial % 2 == 0;
        let x: Vec<f64> = (0..spec.n_param())
            .map(|_| r.gen_range(if smooth { -0.2..0.2 } else { -1.0..1.0 }))
            .collect();
        let mut z: Vec<f64> = Vec::with_capacity(prob.n_z());
        if smooth {
            let mut u = x[spec.n_param() - 1];
            for _ in 0..spec.control_horizon {
                u += r.gen_range(-0.3..0.3);
                z.push(u);
            }
            z.push(r.gen_range(0.0..0.2));
        } else {
            for i in 0..prob.n_z() {
                z.push(if i + 1 == prob.n_z() {
                    r.gen_range(0.0..0.3)
                } else {
                    r.gen_range(-0.8..0.8)
                });
            }
        }
        let zv = DVector::from_column_slice(&z);
        let xv = DVector::from_column_slice(&x);
        let rows = &prob.a * &zv - (&prob.b_mat * &xv + &prob.b_vec);
        let condensed_ok = rows.iter().all(|v| *v <= 1e-9);
        let stage = mpc_stage_violation(&spec, &x, &z);
        let stage_ok = stage <= 1e-9;
        assert_eq!(condensed_ok, stage_ok, "x {x:?} z {z:?} stage {stage}");
        if stage_ok {
            seen_feasible += 1;
        } else {
            seen_infeasible += 1;
        }
    }
    assert!(seen_feasible > 20 && seen_infeasible > 20);
}

#[test]
fn scalar_horizon_one_condensing_by_hand() {
    // N = N_u = N_c = 1, scalar plant: xi+ = a xi + b u, tau = xi.
    // J = (tau_1 - r)^2 Qt + (u0 - u_prev)^2 Qdu + rho2 z^2
    let spec = MpcSpec {
        a: DMatrix::from_element(1, 1, 0.7),
        b: DMatrix::from_element(1, 1, 0.2),
        c: DMatrix::from_element(1, 1, 1.0),
        horizon: 1,
        control_horizon: 1,
        constraint_horizon: 1,
        q_tau: DMatrix::from_element(1, 1, 2.0),
        q_du: DMatrix::from_element(1, 1, 0.5),
        rho2: 3.0,
        rho1: 0.25,
        u_min: DVector::from_vec(vec![f64::NEG_INFINITY]),
        u_max: DVector::from_vec(vec![f64::INFINITY]),
        du_min: DVector::from_vec(vec![f64::NEG_INFINITY]),
        du_max: DVector::from_vec(vec![f64::INFINITY]),
        tau_min: DVector::from_vec(vec![f64::NEG_INFINITY]),
        tau_max: DVector::from_vec(vec![f64::INFINITY]),
        v_min: DVector::from_vec(vec![1.0]),
        v_max: DVector::from_vec(vec![1.0]),
    };
    let bx = Hyperbox::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let prob = condense_mpc(&spec, bx).unwrap();
    // tau_1 = 0.7 xi + 0.2 u: quadratic coefficient of u is
    // 2 (0.2^2 * 2.0 + 0.5) = 1.16; zeta diagonal 2 * 3 = 6
    assert!((prob.q[(0, 0)] - 1.16).abs() < 1e-12);
    assert!((prob.q[(1, 1)] - 6.0).abs() < 1e-12);
    assert!((prob.q[(0, 1)]).abs() < 1e-12);
    // F: d/du cross terms: 2*0.2*2.0*0.7 xi - 2*0.2*2.0 r - 2*0.5 u_prev
    assert!((prob.f_mat[(0, 0)] - 0.56).abs() < 1e-12);
    assert!((prob.f_mat[(0, 1)] + 0.8).abs() < 1e-12);
    assert!((prob.f_mat[(0, 2)] + 1.0).abs() < 1e-12);
    assert!((prob.f_vec[1] - 0.25).abs() < 1e-12);
    // only constraint row: zeta >= 0
    assert_eq!(prob.n_con(), 1);
}

#[test]
fn gated_model_reproduces_law_inside_cr0() {
    let prob = random_mpqp(31, 2, 6, 10);
    let inner = ModelSpec::mlp(2, &[4], Activation::Relu, true);
    let model = mpc_gated_model(
        &prob,
        inner,
        1.0,
        MpcSat::Fixed {
            lo: -10.0,
            hi: 10.0,
        },
    )
    .unwrap();
    let law = unconstrained_law(&prob).unwrap();
    let region = cr0(&prob).unwrap();
    let mut r = rng(33);
    let theta = {
        let mut seed_rng = rng(34);
        model.init_params(&mut seed_rng)
    };
    let mut checked = 0;
    while checked < 500 {
        let x = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        if !region.contains(&x, 0.0) {
            continue;
        }
        let got = model.eval(&theta, &x).unwrap();
        let want = law.eval(&x);
        assert_eq!(got.to_bits(), want.to_bits(), "x = {x:?}");
        checked += 1;
    }
}

#[test]
fn gated_model_clamps_to_band() {
    let prob = random_mpqp(35, 2, 4, 6);
    let inner = ModelSpec::mlp(2, &[3], Activation::Tanh, false);
    let model = mpc_gated_model(
        &prob,
        inner,
        1.0,
        MpcSat::PrevInputBand {
            index: 1,
            du_min: -0.1,
            du_max: 0.1,
            u_min: -1.0,
            u_max: 1.0,
        },
    )
    .unwrap();
    let mut r = rng(36);
    let theta = model.init_params(&mut r);
    for _ in 0..200 {
        let x = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let v = model.eval(&theta, &x).unwrap();
        let lo = (x[1] - 0.1).max(-1.0);
        let hi = (x[1] + 0.1).min(1.0);
        assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
    }
}

#[test]
fn gated_model_gradients_match_fd() {
    let prob = random_mpqp(37, 2, 4, 6);
    let inner = ModelSpec::mlp(2, &[3], Activation::Tanh, true);
    let model = mpc_gated_model(
        &prob,
        inner,
        0.8,
        MpcSat::Fixed {
            lo: -50.0,
            hi: 50.0,
        },
    )
    .unwrap();
    let mut r = rng(38);
    let theta = model.init_params(&mut r);
    let h = 1e-6;
    for _ in 0..30 {
        let x = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let (_, gt, _) = model.grad(&theta, &x, 1.0).unwrap();
        let mut t = theta.clone();
        for i in 0..theta.len() {
            t[i] = theta[i] + h;
            let fp = model.eval(&t, &x).unwrap();
            t[i] = theta[i] - h;
            let fm = model.eval(&t, &x).unwrap();
            t[i] = theta[i];
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (gt[i] - fd).abs() / (1.0 + gt[i].abs()) <= 1e-5,
                "theta[{i}]: {} vs {fd}",
                gt[i]
            );
        }
    }
}

#[test]
fn closed_loop_zero_controller_decays() {
    let spec = toy_mpc_spec(3);
    let controller = |_x: &[f64]| Ok(0.0);
    let reference = vec![0.0; 50];
    let traj = simulate_closed_loop(&spec, &controller, &[1.0, -1.0], 0.0, &reference, 0.5)
        .unwrap();
    let first: f64 = traj.xi[0].iter().map(|v| v.abs()).sum();
    let last: f64 = traj.xi[49].iter().map(|v| v.abs()).sum();
    assert!(last < 0.05 * first);
}

#[test]
fn exact_mpc_controller_settles_on_step_reference() {
    let spec = toy_mpc_spec(8);
    let prob = condense_mpc(&spec, mpc_param_box(&spec)).unwrap();
    let controller = |x: &[f64]| {
        let sol = solve_qp(&prob, x, 1e-10)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::Qp("infeasible".into()));
        }
        Ok(sol.z[0])
    };
    let reference = vec![0.8; 80];
    let traj =
        simulate_closed_loop(&spec, &controller, &[0.0, 0.0], 0.0, &reference, 0.5).unwrap();
    // settled: input rate goes to zero and the output tracks
    let du_last = (traj.u[79] - traj.u[78]).abs();
    assert!(du_last <= 1e-6, "du = {du_last}");
    assert!((traj.tau[79] - 0.8).abs() < 1e-2, "tau = {}", traj.tau[79]);
}

#[test]
fn zoh_matches_scalar_exponential_and_integrator() {
    let a = DMatrix::from_element(1, 1, -0.7);
    let b = DMatrix::from_element(1, 1, 1.0);
    let (ad, bd) = zoh_discretize(&a, &b, 0.3);
    let expected_a = (-0.7f64 * 0.3).exp();
    assert!((ad[(0, 0)] - expected_a).abs() < 1e-12);
    let expected_b = (expected_a - 1.0) / -0.7;
    assert!((bd[(0, 0)] - expected_b).abs() < 1e-12);

    // pure integrator: Ad = 1, Bd = Ts
    let a0 = DMatrix::from_element(1, 1, 0.0);
    let (ad, bd) = zoh_discretize(&a0, &b, 0.25);
    assert!((ad[(0, 0)] - 1.0).abs() < 1e-15);
    assert!((bd[(0, 0)] - 0.25).abs() < 1e-15);
}

