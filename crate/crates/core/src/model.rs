//! Discrete-time innovation-form state-space models.
//!
//! ```text
//! x(k+1) = A x(k) + B u(k) + K e(k)
//! y(k)   = C x(k) + D u(k) + e(k)
//! ```

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    k: DMatrix<f64>,
    ts: f64,
}

impl StateSpaceModel {
    /// Builds a model after checking dimensions. An unstable predictor
    /// (`A - KC` with an eigenvalue on or outside the unit circle) is logged
    /// as a warning but accepted.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        k: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::dim("A", format!("{n}x{n}"), shape(&a)));
        }
        let m = b.ncols();
        let p = c.nrows();
        if b.nrows() != n {
            return Err(Error::dim("B", format!("{n}x{m}"), shape(&b)));
        }
        if c.ncols() != n {
            return Err(Error::dim("C", format!("{p}x{n}"), shape(&c)));
        }
        if d.nrows() != p || d.ncols() != m {
            return Err(Error::dim("D", format!("{p}x{m}"), shape(&d)));
        }
        if k.nrows() != n || k.ncols() != p {
            return Err(Error::dim("K", format!("{n}x{p}"), shape(&k)));
        }
        if !(ts > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling interval must be > 0, got {ts}")));
        }
        let model = StateSpaceModel { a, b, c, d, k, ts };
        if !model.predictor_stable() {
            log::warn!(
                "predictor A - KC is not stable (spectral radius {:.6})",
                linalg::spectral_radius(&model.predictor_form().0)
            );
        }
        Ok(model)
    }

    /// Deterministic model (`K = 0`).
    pub fn deterministic(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        let k = DMatrix::zeros(a.nrows(), c.nrows());
        Self::new(a, b, c, d, k, ts)
    }

    pub fn with_gain(&self, k: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone(), k, self.ts)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn ts(&self) -> f64 {
        self.ts
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn predictor_stable(&self) -> bool {
        linalg::spectral_radius(&self.predictor_form().0) < 1.0
    }

    /// `A_K = A - K C`, `B_K = [B - K D, K]`.
    pub fn predictor_form(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a_k = &self.a - &self.k * &self.c;
        let (n, m, p) = (self.order(), self.n_inputs(), self.n_outputs());
        let mut b_k = DMatrix::zeros(n, m + p);
        b_k.columns_mut(0, m).copy_from(&(&self.b - &self.k * &self.d));
        b_k.columns_mut(m, p).copy_from(&self.k);
        (a_k, b_k)
    }

    fn check_sequence(&self, u: &DMatrix<f64>, x0: &DVector<f64>, e: Option<&DMatrix<f64>>) -> Result<()> {
        if u.ncols() != self.n_inputs() {
            return Err(Error::dim("input matrix U (columns)", self.n_inputs(), u.ncols()));
        }
        if x0.len() != self.order() {
            return Err(Error::dim("initial state x0", self.order(), x0.len()));
        }
        if let Some(e) = e {
            if e.ncols() != self.n_outputs() || e.nrows() != u.nrows() {
                return Err(Error::dim(
                    "innovation matrix E",
                    format!("{}x{}", u.nrows(), self.n_outputs()),
                    shape(e),
                ));
            }
        }
        Ok(())
    }

    /// Runs the innovation-form recursion over the rows of `u` (N × m).
    /// Without `e` the simulation is deterministic.
    pub fn simulate(&self, u: &DMatrix<f64>, x0: &DVector<f64>, e: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        self.check_sequence(u, x0, e)?;
        let n_samples = u.nrows();
        let mut y = DMatrix::zeros(n_samples, self.n_outputs());
        let mut x = x0.clone();
        for k in 0..n_samples {
            let uk = u.row(k).transpose();
            let mut yk = &self.c * &x + &self.d * &uk;
            let mut xn = &self.a * &x + &self.b * &uk;
            if let Some(e) = e {
                let ek = e.row(k).transpose();
                yk += &ek;
                xn += &self.k * &ek;
            }
            y.row_mut(k).copy_from(&yk.transpose());
            x = xn;
        }
        Ok(y)
    }

    /// Same trajectory as [`simulate`](Self::simulate) but through the
    /// predictor recursion `x(k+1) = A_K x(k) + B_K z(k)`, `z = [u; y]`.
    pub fn simulate_predictor(
        &self,
        u: &DMatrix<f64>,
        x0: &DVector<f64>,
        e: Option<&DMatrix<f64>>,
    ) -> Result<DMatrix<f64>> {
        self.check_sequence(u, x0, e)?;
        let (a_k, b_k) = self.predictor_form();
        let (m, p) = (self.n_inputs(), self.n_outputs());
        let mut y = DMatrix::zeros(u.nrows(), p);
        let mut x = x0.clone();
        let mut z = DVector::zeros(m + p);
        for k in 0..u.nrows() {
            let uk = u.row(k).transpose();
            let mut yk = &self.c * &x + &self.d * &uk;
            if let Some(e) = e {
                yk += e.row(k).transpose();
            }
            z.rows_mut(0, m).copy_from(&uk);
            z.rows_mut(m, p).copy_from(&yk);
            x = &a_k * &x + &b_k * &z;
            y.row_mut(k).copy_from(&yk.transpose());
        }
        Ok(y)
    }

    /// Impulse-response sequence `D, CB, CAB, CA²B, …` (`count` terms).
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ak_b = self.b.clone();
        for _ in 1..count {
            out.push(&self.c * &ak_b);
            ak_b = &self.a * ak_b;
        }
        out
    }

    /// Least-squares estimate of the initial state from the first `window`
    /// samples of a deterministic simulation.
    pub fn estimate_initial_state(&self, u: &DMatrix<f64>, y: &DMatrix<f64>, window: usize) -> Result<DVector<f64>> {
        let n = self.order();
        let p = self.n_outputs();
        if y.nrows() != u.nrows() || y.ncols() != p {
            return Err(Error::dim("output matrix Y", format!("{}x{p}", u.nrows()), shape(y)));
        }
        let x0 = DVector::zeros(n);
        if n == 0 {
            return Ok(x0);
        }
        let w = window.min(u.nrows());
        let u_w = u.rows(0, w).into_owned();
        let free = self.simulate(&u_w, &x0, None)?;
        let resid = y.rows(0, w) - free;
        // Stack C A^k over the window against the residual.
        let mut obs = DMatrix::zeros(w * p, n);
        let mut target = DMatrix::zeros(1, w * p);
        let mut cak = self.c.clone();
        for k in 0..w {
            obs.view_mut((k * p, 0), (p, n)).copy_from(&cak);
            for j in 0..p {
                target[(0, k * p + j)] = resid[(k, j)];
            }
            cak = &cak * &self.a;
        }
        let fit = linalg::regress(&target, &obs.transpose(), 1e-12);
        Ok(fit.coef.row(0).transpose())
    }

    pub fn to_file(&self, operating_point: Option<&OperatingPoint>) -> ModelFile {
        ModelFile {
            ts: self.ts,
            order: self.order(),
            inputs: self.n_inputs(),
            outputs: self.n_outputs(),
            a: rows_of(&self.a),
            b: rows_of(&self.b),
            c: rows_of(&self.c),
            d: rows_of(&self.d),
            k: rows_of(&self.k),
            operating_point: operating_point.cloned(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, operating_point: Option<&OperatingPoint>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_file(operating_point).to_toml()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(StateSpaceModel, Option<OperatingPoint>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelFile::from_toml(&text)?.into_model()
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(name: &'static str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("matrix {name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Input/output values the deviation-variable model is linearized around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl OperatingPoint {
    pub fn zero(m: usize, p: usize) -> Self {
        OperatingPoint {
            u: vec![0.0; m],
            y: vec![0.0; p],
        }
    }
}

/// Plaintext (TOML) form of a model: dimensions plus row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub ts: f64,
    pub order: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<OperatingPoint>,
}

impl ModelFile {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize model: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("malformed model file: {e}")))
    }

    pub fn into_model(self) -> Result<(StateSpaceModel, Option<OperatingPoint>)> {
        let (n, m, p) = (self.order, self.inputs, self.outputs);
        let model = StateSpaceModel::new(
            from_rows("a", &self.a, n, n)?,
            from_rows("b", &self.b, n, m)?,
            from_rows("c", &self.c, p, n)?,
            from_rows("d", &self.d, p, m)?,
            from_rows("k", &self.k, n, p)?,
            self.ts,
        )?;
        if let Some(op) = &self.operating_point {
            if op.u.len() != m || op.y.len() != p {
                return Err(Error::Config("operating point dimensions do not match the model".into()));
            }
        }
        Ok((model, self.operating_point))
    }
}

/// One step of the steady-state filter.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStep {
    pub xhat_next: DVector<f64>,
    pub innovation: DVector<f64>,
    pub yhat: DVector<f64>,
}

/// Steady-state Kalman predictor
/// `x̂⁺ = A x̂ + B u + K (y - C x̂ - D u)`.
#[derive(Debug, Clone)]
pub struct KalmanState {
    model: Arc<StateSpaceModel>,
    xhat: DVector<f64>,
}

impl KalmanState {
    pub fn new(model: Arc<StateSpaceModel>) -> Self {
        let xhat = DVector::zeros(model.order());
        KalmanState { model, xhat }
    }

    pub fn with_state(model: Arc<StateSpaceModel>, xhat: DVector<f64>) -> Result<Self> {
        if xhat.len() != model.order() {
            return Err(Error::dim("state estimate", model.order(), xhat.len()));
        }
        Ok(KalmanState { model, xhat })
    }

    pub fn model(&self) -> &Arc<StateSpaceModel> {
        &self.model
    }

    pub fn xhat(&self) -> &DVector<f64> {
        &self.xhat
    }

    pub fn set_xhat(&mut self, xhat: DVector<f64>) -> Result<()> {
        if xhat.len() != self.model.order() {
            return Err(Error::dim("state estimate", self.model.order(), xhat.len()));
        }
        self.xhat = xhat;
        Ok(())
    }

    /// Computes the step without mutating the estimator.
    pub fn peek(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<KalmanStep> {
        let m = &self.model;
        if u.len() != m.n_inputs() {
            return Err(Error::dim("input u_k", m.n_inputs(), u.len()));
        }
        if y.len() != m.n_outputs() {
            return Err(Error::dim("measurement y_k", m.n_outputs(), y.len()));
        }
        let yhat = m.c() * &self.xhat + m.d() * u;
        let innovation = y - &yhat;
        let xhat_next = m.a() * &self.xhat + m.b() * u + m.k() * &innovation;
        Ok(KalmanStep {
            xhat_next,
            innovation,
            yhat,
        })
    }

    pub fn step(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<KalmanStep> {
        let out = self.peek(u, y)?;
        self.xhat = out.xhat_next.clone();
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Stabilizing solution of the Riccati equation (a-priori covariance).
    pub p: DMatrix<f64>,
    /// Steady-state predictor gain `(A P Cᵀ + S)(C P Cᵀ + R)⁻¹`.
    pub k: DMatrix<f64>,
    /// Measurement-update gain `P Cᵀ (C P Cᵀ + R)⁻¹`.
    pub filter_gain: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub const DARE_MAX_ITER: usize = 10_000;
pub const DARE_TOL: f64 = 1e-12;

/// Steady-state Kalman gain by fixed-point iteration of
/// `P = A P Aᵀ - K (C P Cᵀ + R) Kᵀ + Q`, `K = (A P Cᵀ + S)(C P Cᵀ + R)⁻¹`,
/// starting from `P = Q`. `S` is the state/output noise cross-covariance
/// (n × p).
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: Option<&DMatrix<f64>>,
) -> Result<DareSolution> {
    solve_dare_with(a, c, q, r, s, DARE_MAX_ITER, DARE_TOL)
}

pub fn solve_dare_with(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: Option<&DMatrix<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<DareSolution> {
    let n = a.nrows();
    let p_out = c.nrows();
    if !a.is_square() {
        return Err(Error::dim("A", format!("{n}x{n}"), shape(a)));
    }
    if c.ncols() != n {
        return Err(Error::dim("C", format!("{p_out}x{n}"), shape(c)));
    }
    if q.shape() != (n, n) {
        return Err(Error::dim("Q", format!("{n}x{n}"), shape(q)));
    }
    if r.shape() != (p_out, p_out) {
        return Err(Error::dim("R", format!("{p_out}x{p_out}"), shape(r)));
    }
    let zero_s = DMatrix::zeros(n, p_out);
    let s = s.unwrap_or(&zero_s);
    if s.shape() != (n, p_out) {
        return Err(Error::dim("S", format!("{n}x{p_out}"), shape(s)));
    }
    if !linalg::is_symmetric(r, 1e-10) || r.clone().cholesky().is_none() {
        return Err(Error::NotPositive {
            name: "R",
            kind: "definite",
        });
    }
    if !linalg::is_symmetric(q, 1e-10) {
        return Err(Error::NotPositive {
            name: "Q",
            kind: "semidefinite",
        });
    }
    if n > 0 {
        let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * q.amax().max(1.0) {
            return Err(Error::NotPositive {
                name: "Q",
                kind: "semidefinite",
            });
        }
    }

    let gains = |p: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let innov_cov = c * p * c.transpose() + r;
        let inv = innov_cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositive {
                name: "C P Cᵀ + R",
                kind: "definite",
            })?
            .inverse();
        let k = (a * p * c.transpose() + s) * &inv;
        Ok((k, innov_cov, inv))
    };

    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let (k, innov_cov, _) = gains(&p)?;
        let next = linalg::symmetrize(&(a * &p * a.transpose() - &k * innov_cov * k.transpose() + q));
        residual = linalg::spectral_norm(&(&next - &p)) / linalg::spectral_norm(&next).max(1.0);
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual < tol {
            let (k, _, inv) = gains(&p)?;
            let filter_gain = &p * c.transpose() * inv;
            let rho = linalg::spectral_radius(&(a - &k * c));
            if rho >= 1.0 {
                return Err(Error::DareNotStabilizing { spectral_radius: rho });
            }
            return Ok(DareSolution {
                p,
                k,
                filter_gain,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::DareNotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Per-channel `100 · (1 - ‖y - ŷ‖ / ‖y - mean(y)‖)`.
pub fn fit_percent(y_meas: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<Vec<f64>> {
    if y_meas.shape() != y_pred.shape() {
        return Err(Error::dim("predicted outputs", shape(y_meas), shape(y_pred)));
    }
    if y_meas.nrows() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            available: y_meas.nrows(),
        });
    }
    (0..y_meas.ncols())
        .map(|j| {
            let meas = y_meas.column(j);
            let mean = meas.mean();
            let denom = meas.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            if denom == 0.0 {
                return Err(Error::ConstantChannel { channel: j });
            }
            let num = (meas - y_pred.column(j)).norm();
            Ok(100.0 * (1.0 - num / denom))
        })
        .collect()
}
