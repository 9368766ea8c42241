//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use mmpc_core::mpc::MpcConfig;
use mmpc_core::signals::{prbs_channels, Dataset, PrbsSpec};
use mmpc_core::StateSpaceModel;
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Real block-diagonal dynamics (one complex pair when n ≥ 2 and the coin
/// says so) in a random well-conditioned basis, poles in 0.3..0.9 modulus.
/// Returns the model and its true eigenvalues.
pub fn random_stable_system(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> (StateSpaceModel, Vec<Complex<f64>>) {
    let mut a = DMatrix::zeros(n, n);
    let mut eig = Vec::new();
    let mut i = 0;
    if n >= 2 && rng.random_bool(0.5) {
        let r = rng.random_range(0.5..0.9);
        let th = rng.random_range(0.2..1.2);
        let (re, im) = (r * f64::cos(th), r * f64::sin(th));
        a[(0, 0)] = re;
        a[(0, 1)] = im;
        a[(1, 0)] = -im;
        a[(1, 1)] = re;
        eig.push(Complex::new(re, im));
        eig.push(Complex::new(re, -im));
        i = 2;
    }
    while i < n {
        // keep real poles apart so the recovery test is well posed
        let lo = 0.3 + 0.6 * (i as f64) / (n as f64);
        let hi = 0.3 + 0.6 * ((i + 1) as f64) / (n as f64) - 0.02;
        let v = rng.random_range(lo..hi) * if rng.random_bool(0.3) { -1.0 } else { 1.0 };
        a[(i, i)] = v;
        eig.push(Complex::new(v, 0.0));
        i += 1;
    }
    let t = DMatrix::identity(n, n) + random_matrix(rng, n, n) * 0.3;
    let t_inv = t.clone().try_inverse().expect("basis change is invertible");
    let a = &t * a * t_inv;
    let b = random_matrix(rng, n, m);
    let c = random_matrix(rng, p, n);
    let d = DMatrix::zeros(p, m);
    (StateSpaceModel::deterministic(a, b, c, d, 1.0).unwrap(), eig)
}

/// Eigenvalue match over every permutation (n ≤ 6).
pub fn eigen_error(est: &[Complex<f64>], truth: &[Complex<f64>]) -> f64 {
    assert_eq!(est.len(), truth.len());
    fn permute(k: usize, idx: &mut Vec<usize>, est: &[Complex<f64>], truth: &[Complex<f64>], best: &mut f64) {
        if k == idx.len() {
            let worst = idx.iter().enumerate().map(|(i, &j)| (est[i] - truth[j]).norm()).fold(0.0, f64::max);
            *best = best.min(worst);
            return;
        }
        for s in k..idx.len() {
            idx.swap(k, s);
            permute(k + 1, idx, est, truth, best);
            idx.swap(k, s);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..truth.len()).collect(), est, truth, &mut best);
    best
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.complex_eigenvalues().iter().copied().collect()
}

/// Impulse response `D, CB, CAB, …` by direct state recursion.
pub fn impulse_response(model: &StateSpaceModel, count: usize) -> Vec<DMatrix<f64>> {
    let mut out = vec![model.d().clone()];
    let mut x = model.b().clone();
    while out.len() < count {
        out.push(model.c() * &x);
        x = model.a() * x;
    }
    out
}

pub fn relative_impulse_error(est: &StateSpaceModel, truth: &StateSpaceModel, count: usize) -> f64 {
    let (a, b) = (impulse_response(est, count), impulse_response(truth, count));
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_squared()).sum();
    let den: f64 = b.iter().map(|y| y.norm_squared()).sum();
    (num / den).sqrt()
}

/// PRBS-excited dataset from a deterministic model plus white output
/// noise of `noise_frac` times each channel's noise-free standard deviation.
pub fn excite(model: &StateSpaceModel, samples: usize, noise_frac: f64, seed: u64) -> Dataset {
    let spec = PrbsSpec::new(10, (-1.0, 1.0), samples).unwrap().with_clock_period(3);
    let m = model.n_inputs();
    let u = prbs_channels(&spec, &vec![(-1.0, 1.0); m]).unwrap();
    let x0 = DVector::zeros(model.order());
    let mut y = model.simulate(&u, &x0, None).unwrap();
    if noise_frac > 0.0 {
        let mut rng = rng(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        for j in 0..y.ncols() {
            let col = y.column(j);
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            for i in 0..y.nrows() {
                y[(i, j)] += noise_frac * sd * rng.sample(normal);
            }
        }
    }
    Dataset::new(u, y, model.ts()).unwrap()
}

/// Exhaustive active-set enumeration: for every subset of constraints,
/// solve the equality-constrained KKT system and keep the feasible point
/// with the lowest objective.
pub fn qp_enumeration(h: &DMatrix<f64>, f: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let d = f.len();
    let r = b.len();
    let obj = |u: &DVector<f64>| 0.5 * u.dot(&(h * u)) + f.dot(u);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << r) {
        let rows: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        if k > d {
            continue;
        }
        let mut kkt = DMatrix::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(h);
        let mut rhs = DVector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-f));
        for (i, &row) in rows.iter().enumerate() {
            for j in 0..d {
                kkt[(d + i, j)] = a[(row, j)];
                kkt[(j, d + i)] = a[(row, j)];
            }
            rhs[d + i] = b[row];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let u = sol.rows(0, d).into_owned();
        if (a * &u - b).iter().any(|&v| v > 1e-9) {
            continue;
        }
        let j = obj(&u);
        if best.as_ref().is_none_or(|(_, bj)| j < *bj) {
            best = Some((u, j));
        }
    }
    best
}

/// Random strictly convex QP with d ≤ 4, r ≤ 6, feasible by construction:
/// a random point satisfies every row with slack.
pub fn random_qp(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let d = rng.random_range(1..=4);
    let r = rng.random_range(0..=6);
    let l = random_matrix(rng, d, d);
    let h = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
    let f = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let a = random_matrix(rng, r, d);
    let x0 = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
    let b = &a * &x0 + DVector::from_fn(r, |_, _| rng.random_range(0.0..1.0));
    (h, f, a, b)
}

/// Outputs `y(k+1..k+P)` by stepping the innovation model forward: the
/// current innovation enters once, later innovations are zero, and the
/// input follows `u_prev` plus the cumulative moves.
pub fn recursive_prediction(
    model: &StateSpaceModel,
    cfg: &MpcConfig,
    x: &DVector<f64>,
    e: &DVector<f64>,
    u_prev: &DVector<f64>,
    moves: &DVector<f64>,
) -> DVector<f64> {
    let (m, p) = (model.n_inputs(), model.n_outputs());
    let mut out = DVector::zeros(cfg.prediction_horizon * p);
    let mut u = u_prev.clone();
    let mut x = x.clone();
    for i in 0..cfg.prediction_horizon {
        if i < cfg.control_horizon {
            u += moves.rows(i * m, m);
        }
        let e_i = if i == 0 { e.clone() } else { DVector::zeros(p) };
        x = model.a() * &x + model.b() * &u + model.k() * e_i;
        // y(k+i+1) uses the input applied at k+i+1, which equals u(k+i)
        // plus the next move if one is still free.
        let mut u_next = u.clone();
        if i + 1 < cfg.control_horizon {
            u_next += moves.rows((i + 1) * m, m);
        }
        let y = model.c() * &x + model.d() * &u_next;
        out.rows_mut(i * p, p).copy_from(&y);
    }
    out
}
