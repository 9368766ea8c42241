//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;
use std::sync::Arc;

use mmpc_core::error::ErrorKind;
use mmpc_core::experiment::{cmd_control, cmd_identify, ControlMode};
use mmpc_core::model::{OperatingPoint, StateSpaceModel};
use mmpc_core::signals::{prbs_generate, Dataset, PrbsSpec};
use mmpc_core::subspace::{estimate_n4sid, GainEstimate, N4sidConfig};
use mmpc_core::{make_default_fccu, solve_dare, solve_qp, BankEntry, Error, QpProblem, SyncMode};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;
/// `(u, selected index or None, objective per entry)`.
type BankStepTuple = (Vec<f64>, Option<usize>, Vec<Option<f64>>);

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        ErrorKind::Numerical => PyRuntimeError::new_err(e.to_string()),
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows, name: &str) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{name}: rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// PRBS sequence from a maximal-length LFSR.
#[pyfunction]
#[pyo3(signature = (register_length, length, clock_period = 1, seed = 1, low = -1.0, high = 1.0))]
fn prbs(register_length: u32, length: usize, clock_period: usize, seed: u32, low: f64, high: f64) -> PyResult<Vec<f64>> {
    let spec = PrbsSpec::new(register_length, (low, high), length)
        .map_err(py_err)?
        .with_clock_period(clock_period)
        .with_seed(seed);
    prbs_generate(&spec).map_err(py_err)
}

/// Returns `(P, K)` for the filtering Riccati equation.
#[pyfunction]
#[pyo3(signature = (a, c, q, r, s = None))]
fn dare(a: Rows, c: Rows, q: Rows, r: Rows, s: Option<Rows>) -> PyResult<(Rows, Rows)> {
    let s = s.map(|s| matrix(&s, "s")).transpose()?;
    let sol = solve_dare(
        &matrix(&a, "a")?,
        &matrix(&c, "c")?,
        &matrix(&q, "q")?,
        &matrix(&r, "r")?,
        s.as_ref(),
    )
    .map_err(py_err)?;
    Ok((rows(&sol.p), rows(&sol.k)))
}

/// Minimizes ½uᵀHu + fᵀu subject to Au ≤ b; returns `(u, objective, active_set)`.
#[pyfunction]
#[pyo3(signature = (h, f, a = Vec::new(), b = Vec::new(), tol = 1e-9, max_iter = 10_000))]
fn qp(h: Rows, f: Vec<f64>, a: Rows, b: Vec<f64>, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, f64, Vec<usize>)> {
    let a = if a.is_empty() { DMatrix::zeros(0, f.len()) } else { matrix(&a, "a")? };
    let problem = QpProblem::new(matrix(&h, "h")?, vector(&f), a, vector(&b)).map_err(py_err)?;
    let sol = solve_qp(&problem, tol, max_iter).map_err(py_err)?;
    Ok((sol.u.iter().copied().collect(), sol.objective, sol.active_set))
}

#[pyclass(name = "StateSpaceModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: StateSpaceModel,
    op: OperatingPoint,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (a, b, c, d, k, ts, u_op = None, y_op = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(a: Rows, b: Rows, c: Rows, d: Rows, k: Rows, ts: f64, u_op: Option<Vec<f64>>, y_op: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = StateSpaceModel::new(
            matrix(&a, "a")?,
            matrix(&b, "b")?,
            matrix(&c, "c")?,
            matrix(&d, "d")?,
            matrix(&k, "k")?,
            ts,
        )
        .map_err(py_err)?;
        let zero = OperatingPoint::zero(inner.n_inputs(), inner.n_outputs());
        let op = OperatingPoint {
            u: u_op.unwrap_or(zero.u),
            y: y_op.unwrap_or(zero.y),
        };
        Ok(PyModel { inner, op })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, op) = StateSpaceModel::load(path).map_err(py_err)?;
        let op = op.unwrap_or_else(|| OperatingPoint::zero(inner.n_inputs(), inner.n_outputs()));
        Ok(PyModel { inner, op })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path, Some(&self.op)).map_err(py_err)
    }

    #[getter]
    fn a(&self) -> Rows {
        rows(self.inner.a())
    }
    #[getter]
    fn b(&self) -> Rows {
        rows(self.inner.b())
    }
    #[getter]
    fn c(&self) -> Rows {
        rows(self.inner.c())
    }
    #[getter]
    fn d(&self) -> Rows {
        rows(self.inner.d())
    }
    #[getter]
    fn k(&self) -> Rows {
        rows(self.inner.k())
    }
    #[getter]
    fn ts(&self) -> f64 {
        self.inner.ts()
    }
    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }
    #[getter]
    fn operating_point(&self) -> (Vec<f64>, Vec<f64>) {
        (self.op.u.clone(), self.op.y.clone())
    }

    fn predictor_stable(&self) -> bool {
        self.inner.predictor_stable()
    }

    /// Noise-free response to `u` (one row per sample) from `x0`.
    #[pyo3(signature = (u, x0 = None))]
    fn simulate(&self, u: Rows, x0: Option<Vec<f64>>) -> PyResult<Rows> {
        let x0 = x0.map_or_else(|| DVector::zeros(self.inner.order()), |x| vector(&x));
        let y = self.inner.simulate(&matrix(&u, "u")?, &x0, None).map_err(py_err)?;
        Ok(rows(&y))
    }

    fn __repr__(&self) -> String {
        format!(
            "StateSpaceModel(order={}, inputs={}, outputs={}, ts={})",
            self.inner.order(),
            self.inner.n_inputs(),
            self.inner.n_outputs(),
            self.inner.ts()
        )
    }
}

/// N4SID on `(u, y)`; `order=None` selects the order by AIC up to
/// `max_order`. Returns `(model, report_text, validation_fit)`.
#[pyfunction]
#[pyo3(signature = (u, y, ts, future = 15, past = None, order = None, max_order = 8, train_fraction = 0.5, riccati_gain = false))]
#[allow(clippy::too_many_arguments)]
fn identify(
    u: Rows,
    y: Rows,
    ts: f64,
    future: usize,
    past: Option<usize>,
    order: Option<usize>,
    max_order: usize,
    train_fraction: f64,
    riccati_gain: bool,
) -> PyResult<(PyModel, String, Vec<f64>)> {
    let data = Dataset::new(matrix(&u, "u")?, matrix(&y, "y")?, ts).map_err(py_err)?;
    let past = past.unwrap_or(future);
    let cfg = match order {
        Some(n) => N4sidConfig::fixed(future, past, n),
        None => N4sidConfig::aic(future, max_order).with_horizons(future, past),
    }
    .with_gain(if riccati_gain { GainEstimate::Riccati } else { GainEstimate::Regression });
    let (train, valid) = data.split(train_fraction).map_err(py_err)?;
    let mut report = estimate_n4sid(&train, &cfg).map_err(py_err)?;
    let fit = report.validate(&valid).map_err(py_err)?;
    let text = report.summary();
    Ok((
        PyModel {
            inner: report.model,
            op: report.operating_point,
        },
        text,
        fit,
    ))
}

#[pyclass(name = "FccuPlant")]
struct PyPlant {
    inner: mmpc_core::FccuPlant,
}

#[pymethods]
impl PyPlant {
    /// Built-in surrogate; `noise_std` overrides its measurement noise.
    #[new]
    #[pyo3(signature = (seed = 0, noise_std = None))]
    fn new(seed: u64, noise_std: Option<Vec<f64>>) -> PyResult<Self> {
        let mut cfg = make_default_fccu();
        if let Some(n) = noise_std {
            cfg.noise_std = n;
        }
        Ok(PyPlant {
            inner: mmpc_core::FccuPlant::new(cfg, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn u_ss(&self) -> Vec<f64> {
        self.inner.config().u_ss.clone()
    }
    #[getter]
    fn y_ss(&self) -> Vec<f64> {
        self.inner.config().y_ss.clone()
    }
    #[getter]
    fn ts(&self) -> f64 {
        self.inner.config().ts
    }
    #[getter]
    fn t(&self) -> f64 {
        self.inner.state().t
    }
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.state().x.iter().copied().collect()
    }

    #[pyo3(signature = (u, d = None))]
    fn measure(&mut self, u: Vec<f64>, d: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let d = self.disturbance(d);
        Ok(self.inner.measure(&vector(&u), &d).map_err(py_err)?.iter().copied().collect())
    }

    #[pyo3(signature = (u, d = None))]
    fn advance(&mut self, u: Vec<f64>, d: Option<Vec<f64>>) -> PyResult<()> {
        let d = self.disturbance(d);
        self.inner.advance(&vector(&u), &d).map_err(py_err)
    }

    /// Advance under `u`, then measure.
    #[pyo3(signature = (u, d = None))]
    fn step(&mut self, u: Vec<f64>, d: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let d = self.disturbance(d);
        Ok(self.inner.step(&vector(&u), &d).map_err(py_err)?.iter().copied().collect())
    }
}

impl PyPlant {
    fn disturbance(&self, d: Option<Vec<f64>>) -> DVector<f64> {
        d.map_or_else(|| DVector::zeros(self.inner.config().disturbance_gain[0].len()), |d| vector(&d))
    }
}

fn mpc_config(
    model: &StateSpaceModel,
    prediction_horizon: usize,
    control_horizon: usize,
    output_weights: Option<Vec<f64>>,
    move_weights: Option<Vec<f64>>,
    y_min: Option<Vec<f64>>,
    y_max: Option<Vec<f64>>,
) -> mmpc_core::MpcConfig {
    let (m, p) = (model.n_inputs(), model.n_outputs());
    let mut cfg = mmpc_core::MpcConfig::new(prediction_horizon, control_horizon, m, p, model.ts());
    if let Some(w) = output_weights {
        cfg.output_weights = w;
    }
    if let Some(w) = move_weights {
        cfg.move_weights = w;
    }
    if let Some(v) = y_min {
        cfg.y_min = v;
    }
    if let Some(v) = y_max {
        cfg.y_max = v;
    }
    cfg
}

#[pyclass(name = "MpcController", from_py_object)]
#[derive(Clone)]
struct PyController {
    inner: mmpc_core::MpcController,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (model, prediction_horizon, control_horizon, u_init, output_weights = None, move_weights = None, y_min = None, y_max = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &PyModel,
        prediction_horizon: usize,
        control_horizon: usize,
        u_init: Vec<f64>,
        output_weights: Option<Vec<f64>>,
        move_weights: Option<Vec<f64>>,
        y_min: Option<Vec<f64>>,
        y_max: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let cfg = mpc_config(&model.inner, prediction_horizon, control_horizon, output_weights, move_weights, y_min, y_max);
        let inner = mmpc_core::MpcController::new(Arc::new(model.inner.clone()), cfg, model.op.clone(), vector(&u_init))
            .map_err(py_err)?;
        Ok(PyController { inner })
    }

    /// One receding-horizon step toward a constant setpoint; returns `(u, J)`.
    fn step(&mut self, y: Vec<f64>, setpoint: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        let reference = self.inner.constant_reference(&setpoint);
        let (u, diag) = self.inner.control_step(&vector(&y), &reference).map_err(py_err)?;
        Ok((u.iter().copied().collect(), diag.j_opt))
    }

    #[getter]
    fn xhat(&self) -> Vec<f64> {
        self.inner.xhat().iter().copied().collect()
    }
}

#[pyclass(name = "ModelBank")]
struct PyBank {
    inner: mmpc_core::ModelBank,
}

#[pymethods]
impl PyBank {
    /// `controllers` share one configuration; `sync` is "kalman-only" or
    /// "state-copy".
    #[new]
    #[pyo3(signature = (controllers, sync = "kalman-only"))]
    fn new(controllers: Vec<PyController>, sync: &str) -> PyResult<Self> {
        let sync = match sync {
            "kalman-only" => SyncMode::KalmanOnly,
            "state-copy" => SyncMode::StateCopy,
            other => return Err(PyValueError::new_err(format!("unknown sync mode {other:?}"))),
        };
        let entries = controllers
            .into_iter()
            .enumerate()
            .map(|(i, c)| BankEntry {
                id: format!("m{i}"),
                controller: c.inner,
            })
            .collect();
        Ok(PyBank {
            inner: mmpc_core::ModelBank::new(entries, sync).map_err(py_err)?,
        })
    }

    /// Returns `(u, selected index or None, objective per entry)`.
    fn step(&mut self, y: Vec<f64>, setpoint: Vec<f64>) -> PyResult<BankStepTuple> {
        let reference = self.inner.entries()[0].controller.constant_reference(&setpoint);
        let step = self.inner.step(&vector(&y), &reference).map_err(py_err)?;
        Ok((step.u.iter().copied().collect(), step.selected, step.j_values))
    }

    fn selection_frequency(&self) -> Vec<f64> {
        self.inner.selection_frequency()
    }
}

/// Runs `identify` for a config file; returns the artifact directory.
#[pyfunction]
#[pyo3(name = "run_identify")]
fn py_run_identify(config: PathBuf) -> PyResult<String> {
    Ok(cmd_identify(&config).map_err(py_err)?.dir.display().to_string())
}

/// Runs `control` for a config file; returns `(artifact directory, report)`.
#[pyfunction]
#[pyo3(name = "run_control", signature = (config, mode = "multi", identify = true))]
fn py_run_control(config: PathBuf, mode: &str, identify: bool) -> PyResult<(String, String)> {
    let mode: ControlMode = mode.parse().map_err(py_err)?;
    let out = cmd_control(&config, mode, identify).map_err(py_err)?;
    Ok((out.dir.display().to_string(), out.report))
}

#[pymodule]
fn mmpc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(prbs, m)?)?;
    m.add_function(wrap_pyfunction!(dare, m)?)?;
    m.add_function(wrap_pyfunction!(qp, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_identify, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_control, m)?)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPlant>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyBank>()?;
    Ok(())
}
