//! Convex quadratic programs `min fᵀu + ½ uᵀHu  s.t.  A u ≤ b`, solved with
//! Hildreth's dual coordinate-ascent method.
//!
//! The dual `min_{λ≥0} ½ λᵀ P λ + λᵀ d` with `P = A H⁻¹ Aᵀ` and
//! `d = b + A H⁻¹ f` is swept one multiplier at a time. Once the positive
//! multipliers settle, the candidate active set is polished by solving its
//! equality-constrained KKT system directly, which gives a KKT point to
//! working precision instead of relying on the linear convergence of the
//! sweeps.
//!
//! Sweeps converge slowly when `P` is badly conditioned (zero move weights
//! in MPC). After `HANDOFF_SWEEPS` unsuccessful sweeps the problem is
//! handed to a Goldfarb–Idnani dual active-set pass over the same cached
//! `P`, which terminates finitely and certifies infeasibility.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Relative eigenvalue floor of the Hessian; below it `ε I` is added.
pub const REGULARIZATION: f64 = 1e-8;
const POLISH_EVERY: usize = 5;
const HANDOFF_SWEEPS: usize = 50;

#[derive(Debug, Clone)]
pub struct QpProblem {
    h: DMatrix<f64>,
    f: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    regularization: f64,
}

impl QpProblem {
    /// Symmetrizes `h` and, if its smallest eigenvalue is below
    /// `1e-8 · trace(H) / d`, adds that amount to the diagonal.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = f.len();
        if h.shape() != (d, d) {
            return Err(Error::dim("H", format!("{d}x{d}"), format!("{}x{}", h.nrows(), h.ncols())));
        }
        if a.ncols() != d && a.nrows() > 0 {
            return Err(Error::dim("A_ineq (columns)", d, a.ncols()));
        }
        if a.nrows() != b.len() {
            return Err(Error::dim("b_ineq", a.nrows(), b.len()));
        }
        let a = if a.nrows() == 0 { DMatrix::zeros(0, d) } else { a };
        let (h, regularization) = regularize(linalg::symmetrize(&h));
        Ok(QpProblem {
            h,
            f,
            a,
            b,
            regularization,
        })
    }

    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let d = f.len();
        Self::new(h, f, DMatrix::zeros(0, d), DVector::zeros(0))
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    /// Diagonal shift applied to `H` on construction (0 if none).
    pub fn regularization(&self) -> f64 {
        self.regularization
    }
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        self.f.dot(u) + 0.5 * u.dot(&(&self.h * u))
    }
}

fn regularize(h: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let d = h.nrows();
    if d == 0 {
        return (h, 0.0);
    }
    let eps = REGULARIZATION * h.trace().abs() / d as f64;
    let min_eig = h.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < eps {
        let shift = if eps > 0.0 { eps } else { REGULARIZATION };
        let mut h = h;
        for i in 0..d {
            h[(i, i)] += shift;
        }
        (h, shift)
    } else {
        (h, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Indices of constraints with a positive multiplier.
    pub active_set: Vec<usize>,
    pub lambda: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Factorization of the parts of a QP that do not change between MPC
/// sampling instants (`H` and `A`).
#[derive(Debug, Clone)]
pub struct QpFactorization {
    h: DMatrix<f64>,
    a: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `H⁻¹ Aᵀ` (d × r).
    hinv_at: DMatrix<f64>,
    /// `A H⁻¹ Aᵀ` (r × r).
    dual_hessian: DMatrix<f64>,
}

impl QpFactorization {
    pub fn new(qp: &QpProblem) -> Result<Self> {
        Self::from_parts(qp.h.clone(), qp.a.clone())
    }

    pub fn from_parts(h: DMatrix<f64>, a: DMatrix<f64>) -> Result<Self> {
        let chol = h
            .clone()
            .cholesky()
            .ok_or(Error::NotPositive { name: "H", kind: "definite" })?;
        let hinv_at = chol.solve(&a.transpose());
        let dual_hessian = linalg::symmetrize(&(&a * &hinv_at));
        Ok(QpFactorization {
            h,
            a,
            chol,
            hinv_at,
            dual_hessian,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn primal(&self, u_unc: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        u_unc - &self.hinv_at * lambda
    }

    /// Solves with a fresh `f` and `b`.
    pub fn solve(&self, f: &DVector<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<QpSolution> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
        }
        let r = self.a.nrows();
        let d = self.h.nrows();
        if f.len() != d {
            return Err(Error::dim("f", d, f.len()));
        }
        if b.len() != r {
            return Err(Error::dim("b_ineq", r, b.len()));
        }
        let objective = |u: &DVector<f64>| f.dot(u) + 0.5 * u.dot(&(&self.h * u));
        let u_unc = -self.chol.solve(f);
        let b_scale = 1.0 + b.amax();
        let feas_tol = tol * b_scale;
        let finish = |u: DVector<f64>, lambda: DVector<f64>, iterations: usize| {
            let active_set = lambda.iter().enumerate().filter(|(_, &l)| l > 0.0).map(|(i, _)| i).collect();
            QpSolution {
                objective: objective(&u),
                u,
                active_set,
                lambda,
                iterations,
            }
        };

        if r == 0 {
            return Ok(finish(u_unc, DVector::zeros(0), 0));
        }
        let slack0 = &self.a * &u_unc - b;
        if slack0.max() <= feas_tol {
            return Ok(finish(u_unc, DVector::zeros(r), 0));
        }

        // Rows of A that vanish cannot be moved by λ: they are either
        // always satisfied or prove infeasibility outright.
        let mut live = Vec::with_capacity(r);
        let zero_row = f64::EPSILON * self.dual_hessian.amax().max(1.0);
        for i in 0..r {
            if self.dual_hessian[(i, i)] <= zero_row {
                if b[i] < -feas_tol {
                    return Err(Error::QpInfeasible);
                }
            } else {
                live.push(i);
            }
        }

        let d_vec = b - &self.a * &u_unc;
        let p = &self.dual_hessian;
        let a_norm = self.a.amax().max(f64::MIN_POSITIVE);
        let mut lambda = DVector::zeros(r);
        let mut prev = DVector::zeros(r);
        let mut last_residuals = (f64::INFINITY, f64::INFINITY);
        for iter in 1..=max_iter {
            prev.copy_from(&lambda);
            for &i in &live {
                // P is symmetric; the column is contiguous
                let row_dot = p.column(i).dot(&lambda) - p[(i, i)] * lambda[i];
                let w = -(d_vec[i] + row_dot) / p[(i, i)];
                lambda[i] = w.max(0.0);
            }

            let u = self.primal(&u_unc, &lambda);
            let slack = &self.a * &u - b;
            let primal_res = slack.max().max(0.0);
            let comp = lambda.iter().zip(slack.iter()).map(|(l, s)| (l * s).abs()).fold(0.0, f64::max);
            last_residuals = (primal_res, comp);
            if primal_res <= feas_tol && comp <= tol {
                return Ok(finish(u, lambda, iter));
            }

            if iter % POLISH_EVERY == 0 {
                if let Some((u_p, lambda_p)) = self.polish(&u_unc, b, &lambda, tol, feas_tol) {
                    return Ok(finish(u_p, lambda_p, iter));
                }
            }

            if iter == HANDOFF_SWEEPS && max_iter > HANDOFF_SWEEPS {
                match self.dual_active_set(&u_unc, b, feas_tol, max_iter) {
                    Ok((u_d, lambda_d, steps)) => return Ok(finish(u_d, lambda_d, iter + steps)),
                    Err(Error::QpInfeasible) => return Err(Error::QpInfeasible),
                    Err(e) => log::debug!("dual active-set pass gave up ({e}); continuing sweeps"),
                }
            }

            let step = &lambda - &prev;
            if farkas_certificate(&self.a, b, &step, a_norm) {
                return Err(Error::QpInfeasible);
            }
        }
        if lambda.norm() > 0.0 && farkas_certificate(&self.a, b, &lambda, a_norm) {
            return Err(Error::QpInfeasible);
        }
        let best = self.primal(&u_unc, &lambda);
        Err(Error::QpMaxIterations {
            iterations: max_iter,
            best,
            primal_residual: last_residuals.0,
            dual_residual: last_residuals.1,
        })
    }

    /// Goldfarb–Idnani dual active-set method started at the unconstrained
    /// minimum. The working set stays linearly independent, so `P_SS` is
    /// positive definite and is refactored densely at every step.
    fn dual_active_set(
        &self,
        u_unc: &DVector<f64>,
        b: &DVector<f64>,
        feas_tol: f64,
        max_steps: usize,
    ) -> Result<(DVector<f64>, DVector<f64>, usize)> {
        let r = b.len();
        let p_mat = &self.dual_hessian;
        let mut set: Vec<usize> = Vec::new();
        let mut lam: Vec<f64> = Vec::new();
        let full = |set: &[usize], lam: &[f64]| {
            let mut l = DVector::zeros(r);
            for (&i, &v) in set.iter().zip(lam) {
                l[i] = v;
            }
            l
        };
        let mut steps = 0;
        loop {
            let lambda = full(&set, &lam);
            let x = self.primal(u_unc, &lambda);
            let slack = &self.a * &x - b;
            let (p, viol) = slack.argmax();
            if viol <= feas_tol {
                return Ok((x, lambda, steps));
            }
            let mut slack_p = viol;
            let mut lam_p = 0.0;
            loop {
                steps += 1;
                if steps > max_steps {
                    return Err(Error::QpMaxIterations {
                        iterations: steps,
                        best: x,
                        primal_residual: viol,
                        dual_residual: f64::NAN,
                    });
                }
                let k = set.len();
                let dir = if k == 0 {
                    DVector::zeros(0)
                } else {
                    let p_ss = DMatrix::from_fn(k, k, |i, j| p_mat[(set[i], set[j])]);
                    let p_sp = DVector::from_fn(k, |i, _| p_mat[(set[i], p)]);
                    let chol = p_ss.cholesky().ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
                    chol.solve(&p_sp)
                };
                // a_pᵀ z, z = H⁻¹(a_p - A_Sᵀ dir)
                let q = p_mat[(p, p)] - (0..k).map(|i| p_mat[(p, set[i])] * dir[i]).sum::<f64>();
                let t2 = if q > 1e-12 * p_mat[(p, p)] { slack_p / q } else { f64::INFINITY };
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for i in 0..k {
                    if dir[i] > 0.0 {
                        let ratio = lam[i] / dir[i];
                        if ratio < t1 {
                            t1 = ratio;
                            drop = Some(i);
                        }
                    }
                }
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(Error::QpInfeasible);
                }
                for i in 0..k {
                    lam[i] -= t * dir[i];
                }
                lam_p += t;
                if t2 <= t1 {
                    set.push(p);
                    lam.push(lam_p);
                    break;
                }
                slack_p -= t * q;
                let l = drop.expect("finite partial step has a blocking index");
                set.remove(l);
                lam.remove(l);
            }
        }
    }

    /// Solves the KKT system of the constraints whose multiplier is
    /// positive and accepts the result if it is a KKT point of the full
    /// problem.
    fn polish(
        &self,
        u_unc: &DVector<f64>,
        b: &DVector<f64>,
        lambda: &DVector<f64>,
        tol: f64,
        feas_tol: f64,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        if active.is_empty() {
            return None;
        }
        let k = active.len();
        // more than `d` rows cannot be independent; leave those to the sweeps
        if k > self.h.nrows() {
            return None;
        }
        let p_ss = DMatrix::from_fn(k, k, |i, j| self.dual_hessian[(active[i], active[j])]);
        // A_S u = b_S with u = u_unc - H⁻¹ A_Sᵀ μ  ⇒  P_SS μ = A_S u_unc - b_S
        let rhs = DVector::from_fn(k, |i, _| {
            let row = active[i];
            self.a.row(row).dot(&u_unc.transpose()) - b[row]
        });
        let mu = match p_ss.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => {
                let sol = linalg::regress(&DMatrix::from_row_slice(1, k, rhs.as_slice()), &p_ss, 1e-13);
                let mu = sol.coef.transpose();
                if sol.rank < k && (&p_ss * &mu - &rhs).amax() > tol * (1.0 + rhs.amax()) {
                    return None;
                }
                mu.column(0).into_owned()
            }
        };
        let mut full = DVector::zeros(lambda.len());
        for (i, &row) in active.iter().enumerate() {
            let mu = mu[i];
            if mu < -tol {
                return None;
            }
            full[row] = mu.max(0.0);
        }
        let u = self.primal(u_unc, &full);
        let slack = &self.a * &u - b;
        if slack.max() > feas_tol {
            return None;
        }
        let comp = full.iter().zip(slack.iter()).map(|(l, s)| (l * s).abs()).fold(0.0, f64::max);
        if comp > tol {
            return None;
        }
        Some((u, full))
    }
}

/// `y ≥ 0`, `Aᵀy ≈ 0`, `bᵀy < 0` proves `A u ≤ b` has no solution.
fn farkas_certificate(a: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>, a_norm: f64) -> bool {
    let y_norm = y.amax();
    if y_norm == 0.0 || y.min() < -1e-12 * y_norm {
        return false;
    }
    let y = y / y_norm;
    let at_y = a.transpose() * &y;
    let btil = b.dot(&y);
    let b_scale = b.amax().max(1.0);
    at_y.amax() <= 1e-9 * a_norm * y.len() as f64 && btil < -1e-9 * b_scale
}

/// Solves `qp` with Hildreth's method. See the module docs.
pub fn solve_qp(qp: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    QpFactorization::new(qp)?.solve(&qp.f, &qp.b, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_by_two() -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::identity(2, 2) * 2.0, DVector::from_column_slice(&[-2.0, -4.0]))
    }

    #[test]
    fn unconstrained_minimum() {
        let (h, f) = two_by_two();
        let qp = QpProblem::unconstrained(h, f).unwrap();
        let sol = solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_relative_eq!(sol.u, DVector::from_column_slice(&[1.0, 2.0]), epsilon = 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn single_active_bound() {
        let (h, f) = two_by_two();
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let qp = QpProblem::new(h, f, a, DVector::from_element(1, 1.0)).unwrap();
        let sol = solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_relative_eq!(sol.u, DVector::from_column_slice(&[1.0, 1.0]), epsilon = 1e-9);
        // stationarity in u2: 2·1 - 4 + λ = 0
        assert_relative_eq!(sol.lambda[0], 2.0, epsilon = 1e-9);
        assert_eq!(sol.active_set, vec![0]);
        assert_relative_eq!(sol.objective, -2.0 - 4.0 + 0.5 * 4.0, epsilon = 1e-9);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let qp = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_column_slice(&[0.0, -1.0]),
        )
        .unwrap();
        assert!(matches!(solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER), Err(Error::QpInfeasible)));
    }

    #[test]
    fn zero_row_with_negative_bound_is_infeasible() {
        let qp = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        assert!(matches!(solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER), Err(Error::QpInfeasible)));
    }

    #[test]
    fn singular_hessian_is_regularized() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let qp = QpProblem::new(h, DVector::from_column_slice(&[-1.0, -1.0]), DMatrix::zeros(0, 2), DVector::zeros(0))
            .unwrap();
        assert!(qp.regularization() > 0.0);
        let sol = solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_relative_eq!(sol.u[0] + sol.u[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        // Ill-conditioned dual needing many sweeps; one sweep is not enough.
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let qp = QpProblem::new(h, DVector::from_column_slice(&[-5.0, -3.0]), a, DVector::from_column_slice(&[-1.0, -1.0]))
            .unwrap();
        match solve_qp(&qp, 1e-14, 1) {
            Err(Error::QpMaxIterations { iterations, best, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(best.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER).is_ok());
    }

    #[test]
    fn dual_active_set_matches_hand_solution() {
        let (h, f) = two_by_two();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 1.5]);
        let fac = QpFactorization::from_parts(h, a).unwrap();
        let u_unc = -fac.chol.solve(&f);
        let (u, lambda, _) = fac.dual_active_set(&u_unc, &b, 1e-12, 100).unwrap();
        // both rows active: u = (0.5, 1); 2(u - (1, 2)) + λ1 (0, 1) + λ2 (1, 1) = 0 ⇒ λ = (1, 1)
        assert_relative_eq!(u, DVector::from_column_slice(&[0.5, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(lambda, DVector::from_column_slice(&[1.0, 1.0]), epsilon = 1e-12);
        let infeasible = QpFactorization::from_parts(
            DMatrix::identity(1, 1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        )
        .unwrap();
        let err = infeasible.dual_active_set(&DVector::zeros(1), &DVector::from_column_slice(&[0.0, -1.0]), 1e-12, 100);
        assert!(matches!(err, Err(Error::QpInfeasible)));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let err = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2), DMatrix::zeros(1, 3), DVector::zeros(1))
            .unwrap_err();
        assert!(err.to_string().contains("A_ineq"));
    }
}
