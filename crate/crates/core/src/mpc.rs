//! Single-model receding-horizon MPC in velocity (Δu) form.
//!
//! At instant `k` the controller minimizes
//!
//! ```text
//! J(k) = Σ_{i=1..P} ‖ŷ(k+i|k) - r(k+i)‖²_Q + Σ_{i=0..M-1} ‖Δu(k+i|k)‖²_R
//! ```
//!
//! with the stacked prediction `Ŷ = Φ x̂ + Γ_K e_k + Ψ u_prev + Θ ΔU` and
//! linear inequality constraints on outputs, inputs and moves. The model
//! works in deviation variables around an operating point; configuration,
//! measurements and references are in engineering units.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KalmanState, OperatingPoint, StateSpaceModel};
use crate::qp::{QpFactorization, QpProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};

pub const DEFAULT_SOFT_PENALTY: f64 = 1e6;

fn default_soft_penalty() -> f64 {
    DEFAULT_SOFT_PENALTY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Prediction horizon P in steps.
    pub prediction_horizon: usize,
    /// Control horizon M in steps.
    pub control_horizon: usize,
    /// Output weights (p); used at every prediction step unless
    /// `output_weight_schedule` is given.
    pub output_weights: Vec<f64>,
    /// Move weights (m).
    pub move_weights: Vec<f64>,
    /// Optional per-step output weights, P rows of p values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_weight_schedule: Option<Vec<Vec<f64>>>,
    /// Optional per-move weights, M rows of m values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub move_weight_schedule: Option<Vec<Vec<f64>>>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_max: Option<Vec<f64>>,
    pub ts: f64,
    /// Quadratic weight on the output-bound slack of the softened QP.
    #[serde(default = "default_soft_penalty")]
    pub soft_penalty: f64,
}

impl MpcConfig {
    /// Unconstrained outputs, unit output weights, zero move weights.
    pub fn new(prediction_horizon: usize, control_horizon: usize, m: usize, p: usize, ts: f64) -> Self {
        MpcConfig {
            prediction_horizon,
            control_horizon,
            output_weights: vec![1.0; p],
            move_weights: vec![0.0; m],
            output_weight_schedule: None,
            move_weight_schedule: None,
            y_min: vec![f64::NEG_INFINITY; p],
            y_max: vec![f64::INFINITY; p],
            u_min: None,
            u_max: None,
            du_max: None,
            ts,
            soft_penalty: DEFAULT_SOFT_PENALTY,
        }
    }

    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        let (hp, hc) = (self.prediction_horizon, self.control_horizon);
        if hc < 1 || hc > hp {
            return Err(Error::Config(format!(
                "horizons must satisfy 1 <= M <= P, got M = {hc}, P = {hp}"
            )));
        }
        let check_len = |name: &str, v: &[f64], want: usize| -> Result<()> {
            if v.len() != want {
                return Err(Error::Config(format!("{name} has {} entries, expected {want}", v.len())));
            }
            Ok(())
        };
        check_len("output_weights", &self.output_weights, p)?;
        check_len("move_weights", &self.move_weights, m)?;
        check_len("y_min", &self.y_min, p)?;
        check_len("y_max", &self.y_max, p)?;
        if self.output_weights.iter().chain(&self.move_weights).any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("weights must be nonnegative".into()));
        }
        if let Some(s) = &self.output_weight_schedule {
            if s.len() != hp {
                return Err(Error::Config(format!("output_weight_schedule needs {hp} rows")));
            }
            for row in s {
                check_len("output_weight_schedule row", row, p)?;
            }
            if s.iter().flatten().any(|w| !(*w >= 0.0)) {
                return Err(Error::Config("weights must be nonnegative".into()));
            }
        }
        if let Some(s) = &self.move_weight_schedule {
            if s.len() != hc {
                return Err(Error::Config(format!("move_weight_schedule needs {hc} rows")));
            }
            for row in s {
                check_len("move_weight_schedule row", row, m)?;
            }
            if s.iter().flatten().any(|w| !(*w >= 0.0)) {
                return Err(Error::Config("weights must be nonnegative".into()));
            }
        }
        if self.y_min.iter().zip(&self.y_max).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("y_min must be strictly below y_max".into()));
        }
        if let Some(v) = &self.u_min {
            check_len("u_min", v, m)?;
        }
        if let Some(v) = &self.u_max {
            check_len("u_max", v, m)?;
        }
        if let (Some(lo), Some(hi)) = (&self.u_min, &self.u_max) {
            if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                return Err(Error::Config("u_min must be strictly below u_max".into()));
            }
        }
        if let Some(v) = &self.du_max {
            check_len("du_max", v, m)?;
            if v.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::Config("du_max entries must be positive".into()));
            }
        }
        if !(self.ts > 0.0) {
            return Err(Error::Config("ts must be positive".into()));
        }
        if !(self.soft_penalty > 0.0) {
            return Err(Error::Config("soft_penalty must be positive".into()));
        }
        Ok(())
    }

    /// Stacked output weights Q̄ (P·p).
    pub fn q_bar(&self) -> DVector<f64> {
        let p = self.output_weights.len();
        DVector::from_fn(self.prediction_horizon * p, |idx, _| {
            let (i, ch) = (idx / p, idx % p);
            match &self.output_weight_schedule {
                Some(s) => s[i][ch],
                None => self.output_weights[ch],
            }
        })
    }

    /// Stacked move weights R̄ (M·m).
    pub fn r_bar(&self) -> DVector<f64> {
        let m = self.move_weights.len();
        DVector::from_fn(self.control_horizon * m, |idx, _| {
            let (i, ch) = (idx / m, idx % m);
            match &self.move_weight_schedule {
                Some(s) => s[i][ch],
                None => self.move_weights[ch],
            }
        })
    }
}

/// Stacked prediction matrices.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// P·p × n, block i = C A^i.
    pub phi: DMatrix<f64>,
    /// P·p × m, block i = Σ_{t<i} C A^t B + D.
    pub psi: DMatrix<f64>,
    /// P·p × M·m, block (i, j) = Σ_{t<i-j} C A^t B + D for j ≤ i.
    pub theta: DMatrix<f64>,
    /// P·p × p, block i = C A^{i-1} K (current innovation).
    pub gamma_k: DMatrix<f64>,
}

/// Builds `Φ, Ψ, Θ` for outputs `y(k+1..k+P)` given the state at `k`,
/// inputs `u(k+i) = u_prev + Σ_{j≤i} Δu_j` and `Δu_j = 0` for `j ≥ M`.
pub fn build_prediction(model: &StateSpaceModel, cfg: &MpcConfig) -> Result<Prediction> {
    let (n, m, p) = (model.order(), model.n_inputs(), model.n_outputs());
    cfg.validate(m, p)?;
    let (hp, hc) = (cfg.prediction_horizon, cfg.control_horizon);
    let (a, b, c, d, k) = (model.a(), model.b(), model.c(), model.d(), model.k());

    // step[i] = Σ_{t<i} C A^t B, i = 0..=P
    let mut step = Vec::with_capacity(hp + 1);
    step.push(DMatrix::zeros(p, m));
    let mut ca_pow = c.clone(); // C A^t
    let mut phi = DMatrix::zeros(hp * p, n);
    let mut gamma_k = DMatrix::zeros(hp * p, p);
    for i in 1..=hp {
        let next = &step[i - 1] + &ca_pow * b;
        step.push(next);
        gamma_k.view_mut(((i - 1) * p, 0), (p, p)).copy_from(&(&ca_pow * k));
        ca_pow = &ca_pow * a;
        phi.view_mut(((i - 1) * p, 0), (p, n)).copy_from(&ca_pow);
    }
    let mut psi = DMatrix::zeros(hp * p, m);
    let mut theta = DMatrix::zeros(hp * p, hc * m);
    for i in 1..=hp {
        let row = (i - 1) * p;
        psi.view_mut((row, 0), (p, m)).copy_from(&(&step[i] + d));
        for j in 0..hc.min(i + 1) {
            theta.view_mut((row, j * m), (p, m)).copy_from(&(&step[i - j] + d));
        }
    }
    Ok(Prediction {
        phi,
        psi,
        theta,
        gamma_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStatus {
    Optimal,
    /// Hard output bounds were infeasible; the slack-penalized QP was used.
    Softened,
    /// No QP could be solved; the previous input is held.
    Held,
}

/// Outcome of one optimization, before it is applied.
#[derive(Debug, Clone)]
pub struct Plan {
    /// Proposed input u(k) in engineering units.
    pub u: DVector<f64>,
    /// First move Δu(k).
    pub du: DVector<f64>,
    pub delta_u: DVector<f64>,
    /// Objective value of the quadratic criterion at the optimum.
    pub j_opt: f64,
    /// Predicted outputs y(k+1..k+P), engineering units.
    pub y_pred: DVector<f64>,
    /// One-step output estimate ŷ(k|k-1), engineering units.
    pub y_hat: DVector<f64>,
    pub innovation: DVector<f64>,
    pub active_constraints: Vec<usize>,
    pub status: PlanStatus,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub j_opt: f64,
    pub du: DVector<f64>,
    pub y_pred: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub active_constraints: Vec<usize>,
    pub status: PlanStatus,
    pub warnings: Vec<String>,
}

impl From<Plan> for StepDiagnostics {
    fn from(p: Plan) -> Self {
        StepDiagnostics {
            j_opt: p.j_opt,
            du: p.du,
            y_pred: p.y_pred,
            y_hat: p.y_hat,
            active_constraints: p.active_constraints,
            status: p.status,
            warnings: p.warnings,
        }
    }
}

/// Inequality rows `G ΔU ≤ h0 + h(x̂, u_prev)` split by origin.
#[derive(Debug, Clone)]
struct ConstraintLayout {
    /// (row in stacked Ŷ, is_upper, bound in deviation units)
    outputs: Vec<(usize, bool, f64)>,
    /// (input channel, horizon step, is_upper, bound in deviation units)
    inputs: Vec<(usize, usize, bool, f64)>,
    /// (input channel, horizon step, limit)
    moves: Vec<(usize, usize, f64)>,
}

impl ConstraintLayout {
    fn n_rows(&self) -> usize {
        self.outputs.len() + self.inputs.len() + 2 * self.moves.len()
    }
}

#[derive(Debug, Clone)]
pub struct MpcController {
    model: Arc<StateSpaceModel>,
    cfg: MpcConfig,
    op: OperatingPoint,
    estimator: KalmanState,
    /// Last applied input, engineering units.
    u_prev: DVector<f64>,
    /// Innovation of the most recent measurement, deviation units.
    innovation: DVector<f64>,
    pred: Prediction,
    q_bar: DVector<f64>,
    r_bar: DVector<f64>,
    layout: ConstraintLayout,
    g_hard: DMatrix<f64>,
    hard: QpFactorization,
    soft: Option<QpFactorization>,
    hessian_regularization: f64,
}

impl MpcController {
    /// `u_init` is the input applied before the first step (engineering
    /// units); the state estimate starts at zero deviation.
    pub fn new(
        model: Arc<StateSpaceModel>,
        cfg: MpcConfig,
        op: OperatingPoint,
        u_init: DVector<f64>,
    ) -> Result<Self> {
        let (m, p) = (model.n_inputs(), model.n_outputs());
        cfg.validate(m, p)?;
        if (cfg.ts - model.ts()).abs() > 1e-12 * cfg.ts {
            return Err(Error::Config(format!(
                "controller ts {} differs from model ts {}",
                cfg.ts,
                model.ts()
            )));
        }
        if op.u.len() != m || op.y.len() != p {
            return Err(Error::dim("operating point", format!("u: {m}, y: {p}"), format!("u: {}, y: {}", op.u.len(), op.y.len())));
        }
        if u_init.len() != m {
            return Err(Error::dim("initial input", m, u_init.len()));
        }
        let pred = build_prediction(&model, &cfg)?;
        let q_bar = cfg.q_bar();
        let r_bar = cfg.r_bar();
        let layout = constraint_layout(&cfg, &op);
        let g_hard = constraint_matrix(&pred.theta, &layout, m, cfg.control_horizon, None);

        let h = hessian(&pred.theta, &q_bar, &r_bar);
        let qp = QpProblem::new(h, DVector::zeros(pred.theta.ncols()), g_hard.clone(), DVector::zeros(g_hard.nrows()))?;
        let hessian_regularization = qp.regularization();
        let hard = QpFactorization::from_parts(qp.h().clone(), g_hard.clone())?;
        let soft = if layout.outputs.is_empty() {
            None
        } else {
            let (h_soft, g_soft) = soft_parts(qp.h(), &pred.theta, &layout, m, cfg.control_horizon, p, cfg.soft_penalty);
            Some(QpFactorization::from_parts(h_soft, g_soft)?)
        };

        let estimator = KalmanState::new(model.clone());
        Ok(MpcController {
            model,
            cfg,
            op,
            estimator,
            u_prev: u_init,
            innovation: DVector::zeros(p),
            pred,
            q_bar,
            r_bar,
            layout,
            g_hard,
            hard,
            soft,
            hessian_regularization,
        })
    }

    pub fn model(&self) -> &Arc<StateSpaceModel> {
        &self.model
    }
    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }
    pub fn operating_point(&self) -> &OperatingPoint {
        &self.op
    }
    pub fn prediction(&self) -> &Prediction {
        &self.pred
    }
    pub fn estimator(&self) -> &KalmanState {
        &self.estimator
    }
    pub fn xhat(&self) -> &DVector<f64> {
        self.estimator.xhat()
    }
    pub fn set_xhat(&mut self, xhat: DVector<f64>) -> Result<()> {
        self.estimator.set_xhat(xhat)
    }
    pub fn u_prev(&self) -> &DVector<f64> {
        &self.u_prev
    }
    pub fn hessian_regularization(&self) -> f64 {
        self.hessian_regularization
    }

    fn u_dev(&self, u: &DVector<f64>) -> DVector<f64> {
        u - DVector::from_column_slice(&self.op.u)
    }

    fn y_dev_stack(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.op.y.len();
        DVector::from_fn(y.len(), |i, _| y[i] - self.op.y[i % p])
    }

    /// Stacked free response `Φ x̂ + Γ_K e + Ψ u_prev` in deviation units.
    pub fn free_response(&self, xhat: &DVector<f64>) -> DVector<f64> {
        &self.pred.phi * xhat + &self.pred.gamma_k * &self.innovation + &self.pred.psi * self.u_dev(&self.u_prev)
    }

    fn linear_term(&self, free: &DVector<f64>, reference_dev: &DVector<f64>) -> DVector<f64> {
        let weighted = (free - reference_dev).component_mul(&self.q_bar);
        self.pred.theta.transpose() * weighted * 2.0
    }

    fn constraint_rhs(&self, free: &DVector<f64>) -> DVector<f64> {
        let u_prev = self.u_dev(&self.u_prev);
        let mut b = DVector::zeros(self.layout.n_rows());
        let mut row = 0;
        for &(idx, upper, bound) in &self.layout.outputs {
            b[row] = if upper { bound - free[idx] } else { free[idx] - bound };
            row += 1;
        }
        for &(ch, _, upper, bound) in &self.layout.inputs {
            b[row] = if upper { bound - u_prev[ch] } else { u_prev[ch] - bound };
            row += 1;
        }
        for &(_, _, limit) in &self.layout.moves {
            b[row] = limit;
            b[row + 1] = limit;
            row += 2;
        }
        b
    }

    /// QP for the current estimator state: `H = 2(ΘᵀQ̄Θ + R̄)`,
    /// `f = 2ΘᵀQ̄(free − ref)`, with `ref` of length P·p in engineering
    /// units.
    pub fn assemble_qp(&self, xhat: &DVector<f64>, reference: &DVector<f64>) -> Result<QpProblem> {
        self.check_reference(reference)?;
        if xhat.len() != self.model.order() {
            return Err(Error::dim("state estimate", self.model.order(), xhat.len()));
        }
        let free = self.free_response(xhat);
        let f = self.linear_term(&free, &self.y_dev_stack(reference));
        QpProblem::new(self.hard.h().clone(), f, self.g_hard.clone(), self.constraint_rhs(&free))
    }

    fn check_reference(&self, reference: &DVector<f64>) -> Result<()> {
        let want = self.cfg.prediction_horizon * self.model.n_outputs();
        if reference.len() != want {
            return Err(Error::dim("reference trajectory", want, reference.len()));
        }
        Ok(())
    }

    /// Constant extension of a setpoint over the prediction horizon.
    pub fn constant_reference(&self, setpoint: &[f64]) -> DVector<f64> {
        let p = setpoint.len();
        DVector::from_fn(self.cfg.prediction_horizon * p, |i, _| setpoint[i % p])
    }

    /// Tracking plus move-penalty objective for a move sequence, given the free response.
    fn criterion(&self, free: &DVector<f64>, reference_dev: &DVector<f64>, delta_u: &DVector<f64>) -> (f64, DVector<f64>) {
        let y_pred = free + &self.pred.theta * delta_u;
        let err = &y_pred - reference_dev;
        let j = err.component_mul(&err).dot(&self.q_bar) + delta_u.component_mul(delta_u).dot(&self.r_bar);
        (j, y_pred)
    }

    /// Measures `y_k`, updates the innovation and solves the QP without
    /// committing anything.
    pub fn plan(&self, y_k: &DVector<f64>, reference: &DVector<f64>) -> Result<Plan> {
        let (m, p) = (self.model.n_inputs(), self.model.n_outputs());
        if y_k.len() != p {
            return Err(Error::dim("measurement y_k", p, y_k.len()));
        }
        self.check_reference(reference)?;
        let y_dev = y_k - DVector::from_column_slice(&self.op.y);
        let kstep = self.estimator.peek(&self.u_dev(&self.u_prev), &y_dev)?;
        let xhat = self.estimator.xhat();
        let ref_dev = self.y_dev_stack(reference);

        let free = &self.pred.phi * xhat + &self.pred.gamma_k * &kstep.innovation + &self.pred.psi * self.u_dev(&self.u_prev);
        let f = self.linear_term(&free, &ref_dev);
        let b = self.constraint_rhs(&free);

        let mut warnings = Vec::new();
        let n_dec = self.pred.theta.ncols();
        let (delta_u, active, status) = match self.hard.solve(&f, &b, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(sol) => (sol.u, sol.active_set, PlanStatus::Optimal),
            Err(hard_err) => {
                warnings.push(format!("hard-constrained QP failed: {hard_err}"));
                match self.solve_soft(&f, &b) {
                    Some(Ok((du, active))) => {
                        warnings.push("output bounds softened".to_string());
                        (du, active, PlanStatus::Softened)
                    }
                    Some(Err(e)) => {
                        warnings.push(format!("softened QP failed: {e}; holding previous input"));
                        (DVector::zeros(n_dec), Vec::new(), PlanStatus::Held)
                    }
                    None => {
                        warnings.push("holding previous input".to_string());
                        (DVector::zeros(n_dec), Vec::new(), PlanStatus::Held)
                    }
                }
            }
        };
        for w in &warnings {
            log::warn!("{w}");
        }

        let (j_opt, y_pred_dev) = self.criterion(&free, &ref_dev, &delta_u);
        let du = delta_u.rows(0, m).into_owned();
        let u = &self.u_prev + &du;
        let y_pred = DVector::from_fn(y_pred_dev.len(), |i, _| y_pred_dev[i] + self.op.y[i % p]);
        let y_hat = kstep.yhat + DVector::from_column_slice(&self.op.y);
        Ok(Plan {
            u,
            du,
            delta_u,
            j_opt,
            y_pred,
            y_hat,
            innovation: kstep.innovation,
            active_constraints: active,
            status,
            warnings,
        })
    }

    fn solve_soft(&self, f: &DVector<f64>, b: &DVector<f64>) -> Option<Result<(DVector<f64>, Vec<usize>)>> {
        let soft = self.soft.as_ref()?;
        let n_dec = self.pred.theta.ncols();
        let p = self.model.n_outputs();
        let mut f_soft = DVector::zeros(n_dec + p);
        f_soft.rows_mut(0, n_dec).copy_from(f);
        let mut b_soft = DVector::zeros(b.len() + p);
        b_soft.rows_mut(0, b.len()).copy_from(b);
        Some(
            soft.solve(&f_soft, &b_soft, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .map(|sol| (sol.u.rows(0, n_dec).into_owned(), sol.active_set)),
        )
    }

    /// Applies `u_applied` (engineering units): completes the estimator
    /// update `x̂⁺ = A x̂ + B u + K e` and records the input.
    pub fn commit(&mut self, plan: &Plan, u_applied: &DVector<f64>) -> Result<()> {
        if u_applied.len() != self.model.n_inputs() {
            return Err(Error::dim("applied input", self.model.n_inputs(), u_applied.len()));
        }
        let m = &self.model;
        let x = self.estimator.xhat();
        let next = m.a() * x + m.b() * self.u_dev(u_applied) + m.k() * &plan.innovation;
        self.estimator.set_xhat(next)?;
        self.innovation = plan.innovation.clone();
        self.u_prev = u_applied.clone();
        Ok(())
    }

    /// One receding-horizon step: estimate, optimize, apply the first move.
    pub fn control_step(&mut self, y_k: &DVector<f64>, reference: &DVector<f64>) -> Result<(DVector<f64>, StepDiagnostics)> {
        let plan = self.plan(y_k, reference)?;
        let u = plan.u.clone();
        self.commit(&plan, &u)?;
        Ok((u, plan.into()))
    }
}

fn hessian(theta: &DMatrix<f64>, q_bar: &DVector<f64>, r_bar: &DVector<f64>) -> DMatrix<f64> {
    let mut weighted = theta.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= q_bar[i];
    }
    let mut h = theta.transpose() * weighted;
    for i in 0..h.nrows() {
        h[(i, i)] += r_bar[i];
    }
    h * 2.0
}

fn constraint_layout(cfg: &MpcConfig, op: &OperatingPoint) -> ConstraintLayout {
    let p = cfg.y_min.len();
    let m = cfg.move_weights.len();
    let mut outputs = Vec::new();
    for i in 0..cfg.prediction_horizon {
        for ch in 0..p {
            let idx = i * p + ch;
            if cfg.y_max[ch].is_finite() {
                outputs.push((idx, true, cfg.y_max[ch] - op.y[ch]));
            }
            if cfg.y_min[ch].is_finite() {
                outputs.push((idx, false, cfg.y_min[ch] - op.y[ch]));
            }
        }
    }
    let mut inputs = Vec::new();
    for step in 0..cfg.control_horizon {
        for ch in 0..m {
            if let Some(hi) = &cfg.u_max {
                if hi[ch].is_finite() {
                    inputs.push((ch, step, true, hi[ch] - op.u[ch]));
                }
            }
            if let Some(lo) = &cfg.u_min {
                if lo[ch].is_finite() {
                    inputs.push((ch, step, false, lo[ch] - op.u[ch]));
                }
            }
        }
    }
    let mut moves = Vec::new();
    if let Some(du) = &cfg.du_max {
        for step in 0..cfg.control_horizon {
            for (ch, &limit) in du.iter().enumerate().take(m) {
                if limit.is_finite() {
                    moves.push((ch, step, limit));
                }
            }
        }
    }
    ConstraintLayout { outputs, inputs, moves }
}

/// Rows of `G` in the same order as `constraint_rhs`. With `slack` set to
/// the output count, output rows also subtract the channel slack.
fn constraint_matrix(
    theta: &DMatrix<f64>,
    layout: &ConstraintLayout,
    m: usize,
    hc: usize,
    slack: Option<usize>,
) -> DMatrix<f64> {
    let n_dec = hc * m;
    let extra = slack.unwrap_or(0);
    let rows = layout.n_rows() + extra;
    let mut g = DMatrix::zeros(rows, n_dec + extra);
    let mut row = 0;
    for &(idx, upper, _) in &layout.outputs {
        let sign = if upper { 1.0 } else { -1.0 };
        g.view_mut((row, 0), (1, n_dec)).copy_from(&(theta.row(idx) * sign));
        if let Some(p) = slack {
            g[(row, n_dec + idx % p)] = -1.0;
        }
        row += 1;
    }
    for &(ch, step, upper, _) in &layout.inputs {
        let sign = if upper { 1.0 } else { -1.0 };
        // u(k+step) - u_prev = Σ_{j ≤ step} Δu_j
        for j in 0..=step {
            g[(row, j * m + ch)] = sign;
        }
        row += 1;
    }
    for &(ch, step, _) in &layout.moves {
        g[(row, step * m + ch)] = 1.0;
        g[(row + 1, step * m + ch)] = -1.0;
        row += 2;
    }
    if let Some(p) = slack {
        for ch in 0..p {
            g[(row + ch, n_dec + ch)] = -1.0;
        }
    }
    g
}

fn soft_parts(
    h: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    layout: &ConstraintLayout,
    m: usize,
    hc: usize,
    p: usize,
    penalty: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_dec = h.nrows();
    let mut h_soft = DMatrix::zeros(n_dec + p, n_dec + p);
    h_soft.view_mut((0, 0), (n_dec, n_dec)).copy_from(h);
    for ch in 0..p {
        h_soft[(n_dec + ch, n_dec + ch)] = 2.0 * penalty;
    }
    let g = constraint_matrix(theta, layout, m, hc, Some(p));
    (h_soft, g)
}
