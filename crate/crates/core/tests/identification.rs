mod common;

use std::sync::Arc;

use common::{eigen_error, eigenvalues, excite, random_stable_system, relative_impulse_error, rng};
use mmpc_core::subspace::{estimate_n4sid, Detrend, N4sidConfig};
use mmpc_core::{solve_dare, KalmanState, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Generated data have no offset, so mean removal would only add a
/// constant the state cannot represent.
fn exact(future: usize, n: usize) -> N4sidConfig {
    N4sidConfig::fixed(future, future, n).with_detrend(Detrend::None)
}

#[test]
fn noise_free_recovery_is_coordinate_free() {
    let mut r = rng(11);
    for n in 2..=4 {
        let (truth, eig) = random_stable_system(&mut r, n, 2, 2);
        let data = excite(&truth, 1500, 0.0, 0);
        let report = estimate_n4sid(&data, &exact(8, n)).unwrap();
        let est = &report.model;
        assert!(eigen_error(&eigenvalues(est.a()), &eig) < 1e-6);
        assert!(relative_impulse_error(est, &truth, 50) < 1e-6);
        assert!(report.shift_residual < 1e-6, "{}", report.shift_residual);
    }
}

#[test]
fn more_data_does_not_hurt_noise_free_eigenvalues() {
    let mut r = rng(5);
    let (truth, eig) = random_stable_system(&mut r, 3, 2, 2);
    let err = |samples| {
        let data = excite(&truth, samples, 0.0, 0);
        let report = estimate_n4sid(&data, &exact(8, 3)).unwrap();
        eigen_error(&eigenvalues(report.model.a()), &eig)
    };
    let (e1, e2) = (err(800), err(1600));
    // both at round-off level; doubling N must not move the error off it
    assert!(e2 <= e1.max(1e-9), "{e1} -> {e2}");
}

#[test]
fn aic_picks_true_order_with_noise() {
    let mut r = rng(21);
    let (truth, _) = random_stable_system(&mut r, 2, 2, 2);
    let data = excite(&truth, 3000, 0.05, 4);
    let report = estimate_n4sid(&data, &N4sidConfig::aic(10, 6)).unwrap();
    assert_eq!(report.chosen_order, 2, "{}", report.summary());
    let scores = report.aic_scores.as_ref().unwrap();
    assert_eq!(scores.len(), 6);
}

#[test]
fn open_loop_diagnostic_is_small_for_prbs() {
    let mut r = rng(2);
    let (truth, _) = random_stable_system(&mut r, 2, 2, 2);
    let data = excite(&truth, 3000, 0.05, 9);
    let report = estimate_n4sid(&data, &N4sidConfig::fixed(10, 10, 2)).unwrap();
    assert!(report.open_loop_correlation < 0.05, "{}", report.open_loop_correlation);
}

#[test]
fn innovation_covariance_matches_riccati_prediction() {
    // x+ = A x + w, y = C x + v with known Q, R; the stationary filter's
    // innovations have covariance C P Cᵀ + R.
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, -0.1, 0.7]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.02]));
    let rr = DMatrix::from_element(1, 1, 0.09);
    let sol = solve_dare(&a, &c, &q, &rr, None).unwrap();
    let model = StateSpaceModel::new(a.clone(), DMatrix::zeros(2, 1), c.clone(), DMatrix::zeros(1, 1), sol.k.clone(), 1.0).unwrap();
    let mut filter = KalmanState::new(Arc::new(model));
    let mut r = rng(77);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut x = DVector::zeros(2);
    let (mut sum, mut count) = (0.0, 0usize);
    let u = DVector::zeros(1);
    for k in 0..30_000 {
        let y = &c * &x + DVector::from_element(1, 0.3 * r.sample(normal));
        let step = filter.step(&u, &y).unwrap();
        if k >= 1000 {
            sum += step.innovation[0].powi(2);
            count += 1;
        }
        let w = DVector::from_vec(vec![0.2 * r.sample(normal), 0.02f64.sqrt() * r.sample(normal)]);
        x = &a * &x + w;
    }
    let expected = (&c * &sol.p * c.transpose())[(0, 0)] + 0.09;
    let measured = sum / count as f64;
    assert!((measured - expected).abs() / expected < 0.10, "{measured} vs {expected}");
}

#[test]
fn noisy_fit_is_high() {
    let mut r = rng(31);
    let mut fits = Vec::new();
    for _ in 0..4 {
        let n = r.random_range(2..=4);
        let (truth, _) = random_stable_system(&mut r, n, 2, 2);
        let data = excite(&truth, 2000, 0.01, 3);
        let (train, valid) = data.split(0.5).unwrap();
        let mut report = estimate_n4sid(&train, &N4sidConfig::fixed(10, 10, n)).unwrap();
        fits.extend(report.validate(&valid).unwrap());
    }
    assert!(fits.iter().all(|&f| f > 95.0), "{fits:?}");
}

