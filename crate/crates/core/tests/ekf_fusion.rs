//! Filter Jacobians against finite differences, measurement models against
//! simulated ground truth, and covariance hygiene over full runs.

use legtrack::ekf::{
    ekf_run, measurement1_jacobian, measurement1_predict, measurement2_predict, measurement3_predict,
    predict, process_derivative, process_jacobians, update, BiasConvention, FilterConfig, FilterError,
    FusionState, LegModel, NoiseConfig, SegmentState, UpdateOutcome, STATE_DIM,
};
use legtrack::imu::{EarthFields, GyroBiasModel};
use legtrack::linalg::Matrix;
use legtrack::quat::{Quaternion, Vec3};
use legtrack::sim::{generate_truth, simulate, CameraPose, GaitProfile, Scenario};

fn sample_state() -> FusionState<f64> {
    FusionState {
        upper: SegmentState {
            omega: Vec3::new(0.4, -1.2, 0.3),
            bias: Vec3::new(0.01, -0.02, 0.005),
            q: Quaternion::new(0.7, 0.1, 0.6, -0.2).normalize().unwrap(),
        },
        lower: SegmentState {
            omega: Vec3::new(-0.8, 2.1, 0.1),
            bias: Vec3::new(-0.004, 0.0, 0.012),
            q: Quaternion::new(0.5, -0.3, 0.7, 0.1).normalize().unwrap(),
        },
    }
}

fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let h = 1e-6;
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    for j in 0..x.len() {
        let (mut p, mut n) = (x.to_vec(), x.to_vec());
        p[j] += h;
        n[j] -= h;
        let (fp, fm) = (f(&p), f(&n));
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

fn assert_matrix_close(analytic: &Matrix<f64>, numeric: &[Vec<f64>], tol: f64) {
    for (i, row) in numeric.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let a = analytic[(i, j)];
            assert!((a - v).abs() < tol, "({i},{j}): analytic {a} vs numeric {v}");
        }
    }
}

#[test]
fn process_jacobians_match_finite_differences() {
    let bias = GyroBiasModel::with_tau(80.0);
    let x = sample_state();
    let (f, l) = process_jacobians(&x, &bias);
    let df = central_difference(&x.to_vec(), |v| process_derivative(&FusionState::from_slice(v), None, &bias));
    assert_matrix_close(&f, &df, 1e-8);
    let zero = vec![0.0; STATE_DIM];
    let dl = central_difference(&zero, |w| process_derivative(&x, Some(w), &bias));
    assert_matrix_close(&l, &dl, 1e-8);
}

#[test]
fn measurement1_jacobian_matches_finite_differences() {
    let x = sample_state();
    for conv in [BiasConvention::Additive, BiasConvention::Subtractive] {
        let h = measurement1_jacobian::<f64>(conv);
        let d = central_difference(&x.to_vec(), |v| measurement1_predict(&FusionState::from_slice(v), conv));
        assert_matrix_close(&h, &d, 1e-8);
    }
}

#[test]
fn measurement_models_vanish_on_truth() {
    let leg = LegModel::default();
    let pose = CameraPose::default();
    let truth = generate_truth(&GaitProfile::run_in_place(), 100.0, &leg).unwrap();
    let cam_from_ned = pose.to_ned.q.conjugate();
    for s in truth.iter().step_by(37) {
        let x = FusionState {
            upper: SegmentState {
                omega: s.omega[0],
                bias: Vec3::zeros(),
                q: s.q[0],
            },
            lower: SegmentState {
                omega: s.omega[1],
                bias: Vec3::zeros(),
                q: s.q[1],
            },
        };
        let h2 = measurement2_predict(&x, s.imu_velocity[0], s.imu_velocity[1], &leg);
        assert!(h2.norm() < 1e-9, "knee constraint residual {} at t={}", h2.norm(), s.t);
        let h3 = measurement3_predict(&x, cam_from_ned, &leg);
        let seg = [s.joints[1] - s.joints[0], s.joints[2] - s.joints[1]];
        for k in 0..2 {
            let want = cam_from_ned.rotate(seg[k]);
            let got = Vec3::new(h3[3 * k], h3[3 * k + 1], h3[3 * k + 2]);
            assert!((got - want).norm() < 1e-12, "segment {k} at t={}", s.t);
        }
    }
}

#[test]
fn scalar_update_matches_textbook_kalman_gain() {
    let mut x = sample_state();
    let diag: Vec<f64> = (0..STATE_DIM).map(|i| 0.01 * (1.0 + i as f64)).collect();
    let mut p = Matrix::from_diagonal(&diag);
    p[(0, 3)] = 0.002;
    p[(3, 0)] = 0.002;
    let mut h = Matrix::zeros(1, STATE_DIM);
    h[(0, 0)] = 1.0;
    h[(0, 3)] = 1.0;
    let r = 0.005;
    let innov = 0.3;
    // s = p00 + p33 + 2 p03 + r; k_i = (p_i0 + p_i3) / s
    let s = diag[0] + diag[3] + 2.0 * 0.002 + r;
    let k0 = (diag[0] + 0.002) / s;
    let k3 = (diag[3] + 0.002) / s;
    let x0 = x.to_vec();
    let out = update(&mut x, &mut p, &[innov], &h, &[r]);
    assert!(matches!(out, UpdateOutcome::Applied { .. }));
    let x1 = x.to_vec();
    assert!((x1[0] - x0[0] - k0 * innov).abs() < 1e-14);
    assert!((x1[3] - x0[3] - k3 * innov).abs() < 1e-14);
    assert!((x1[10] - x0[10]).abs() < 1e-15);
    let p00 = diag[0] - k0 * (diag[0] + 0.002);
    assert!((p[(0, 0)] - p00).abs() < 1e-14);
}

#[test]
fn singular_innovation_is_skipped() {
    let mut x = sample_state();
    let mut p = Matrix::zeros(STATE_DIM, STATE_DIM);
    let before = (x, p.clone());
    let mut h2 = Matrix::zeros(2, STATE_DIM);
    h2[(0, 0)] = 1.0;
    h2[(1, 0)] = 1.0;
    // two identical rows with no noise: S is singular
    let out = update(&mut x, &mut p, &[0.1, 0.1], &h2, &[0.0, 0.0]);
    assert!(matches!(out, UpdateOutcome::Skipped { .. }));
    assert_eq!((x, p), before);
}

#[test]
fn predict_rejects_bad_steps_and_keeps_hygiene() {
    let noise = NoiseConfig::default();
    let bias = GyroBiasModel::with_tau(100.0);
    let x = sample_state();
    let p = Matrix::identity(STATE_DIM).scale(1e-3);
    for dt in [0.0, -0.01, 0.06, f64::NAN] {
        assert!(matches!(predict(&x, &p, dt, &noise, &bias), Err(FilterError::BadTimeStep(_))));
    }
    let (mut xs, mut ps) = (x, p);
    for _ in 0..500 {
        (xs, ps) = predict(&xs, &ps, 0.01, &noise, &bias).unwrap();
    }
    assert!(xs.max_quat_norm_error() < 1e-14);
    assert_eq!(ps.max_asymmetry(), 0.0);
    assert!(ps.symmetric_eigenvalues()[0] > 0.0);
}

#[test]
fn full_runs_stay_healthy() {
    for profile in [GaitProfile::walk(), GaitProfile::run_in_place()] {
        let mut profile = profile;
        profile.duration = 8.0;
        let s = Scenario::new(profile, 21);
        let out = simulate(&s).unwrap();
        let mut cfg = FilterConfig::new(s.fields, s.pose.to_ned);
        cfg.leg = s.leg;
        cfg.check_health = true;
        let (steps, health) = ekf_run(&out.imu.upper, &out.imu.lower, &[], &cfg).unwrap();
        assert_eq!(steps.len(), out.imu.upper.len());
        assert!(health.worst_quat_norm_error < 1e-12, "{health:?}");
        assert!(health.worst_min_eigenvalue > 0.0, "{health:?}");
        assert!(health.worst_asymmetry == 0.0, "{health:?}");
        assert_eq!(health.trace_increases, 0, "{health:?}");
        assert_eq!(health.updates_skipped, 0, "{health:?}");
    }
}

#[test]
fn stream_gap_is_reported() {
    let mut profile = GaitProfile::walk();
    profile.duration = 3.0;
    let s = Scenario::new(profile, 2);
    let mut out = simulate(&s).unwrap();
    for v in [&mut out.imu.upper, &mut out.imu.lower] {
        v.drain(100..170);
    }
    let cfg = FilterConfig::new(EarthFields::default(), s.pose.to_ned);
    let err = ekf_run(&out.imu.upper, &out.imu.lower, &[], &cfg).unwrap_err();
    assert!(matches!(err, FilterError::StreamDiscontinuity { .. }), "{err}");
}
