//! N4SID subspace identification.
//!
//! Past data `Z_p` (stacked `z_k = [u_k; y_k]`), future inputs `U_f` and
//! future outputs `Y_f` are arranged as block-Hankel matrices. The future
//! outputs are regressed jointly on `[Z_p; U_f]`; the `Z_p` block of the
//! coefficients is `Ĥ_fp`, and an SVD of `Ĥ_fp Z_p` yields the extended
//! observability matrix and the state sequence. System matrices are then
//! read off two least-squares regressions on the estimated states.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{fit_percent, OperatingPoint, StateSpaceModel};
use crate::signals::Dataset;

/// Relative singular-value cutoff for least squares and rank decisions.
const RCOND: f64 = 1e-10;
/// Conditioning limit for the future-input block.
const MAX_CONDITION: f64 = 1e12;
/// Innovations below this fraction of the output energy are treated as
/// zero; the state regression then omits the Kalman-gain block.
const NEGLIGIBLE_INNOVATION: f64 = 1e-9;
/// Floor added to residual covariances, relative to the mean output
/// variance, so exact fits keep a finite log-determinant.
const COVARIANCE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum OrderSelection {
    Fixed { order: usize },
    Aic { min: usize, max: usize },
}

impl OrderSelection {
    fn range(&self) -> (usize, usize) {
        match *self {
            OrderSelection::Fixed { order } => (order, order),
            OrderSelection::Aic { min, max } => (min, max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detrend {
    None,
    #[default]
    Mean,
}

/// How the innovation gain `K` is obtained from the state sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainEstimate {
    /// Innovation block of the state regression on `(x, u, ê)`.
    #[default]
    Regression,
    /// Stationary Kalman gain from the residual covariances of the state
    /// and output regressions.
    Riccati,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct N4sidConfig {
    /// Future horizon `f` (block rows of `U_f`, `Y_f`).
    pub future: usize,
    /// Past horizon `p` (block rows of `Z_p`).
    pub past: usize,
    pub order: OrderSelection,
    #[serde(default)]
    pub detrend: Detrend,
    #[serde(default)]
    pub gain: GainEstimate,
}

impl N4sidConfig {
    pub fn aic(horizon: usize, max_order: usize) -> Self {
        N4sidConfig {
            future: horizon,
            past: horizon,
            order: OrderSelection::Aic { min: 1, max: max_order },
            detrend: Detrend::Mean,
            gain: GainEstimate::Regression,
        }
    }

    pub fn fixed(future: usize, past: usize, order: usize) -> Self {
        N4sidConfig {
            future,
            past,
            order: OrderSelection::Fixed { order },
            detrend: Detrend::Mean,
            gain: GainEstimate::Regression,
        }
    }

    pub fn with_detrend(mut self, detrend: Detrend) -> Self {
        self.detrend = detrend;
        self
    }

    pub fn with_gain(mut self, gain: GainEstimate) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_horizons(mut self, future: usize, past: usize) -> Self {
        self.future = future;
        self.past = past;
        self
    }

    /// Checks horizons against the candidate orders and the sample count.
    pub fn validate(&self, n_samples: usize, m: usize, p: usize) -> Result<()> {
        let (n_min, n_max) = self.order.range();
        if n_min == 0 || n_min > n_max {
            return Err(Error::InvalidArgument(format!(
                "order candidates must satisfy 1 <= min <= max, got {n_min}..={n_max}"
            )));
        }
        if self.future < n_max + 1 || self.past < n_max + 1 {
            return Err(Error::InvalidArgument(format!(
                "horizons f = {}, p = {} must exceed the largest candidate order {n_max}",
                self.future, self.past
            )));
        }
        let required = 10 * (m + p) * self.past + self.future + self.past - 1;
        if n_samples < required {
            return Err(Error::InsufficientSamples {
                required,
                available: n_samples,
            });
        }
        Ok(())
    }
}

/// Block-Hankel matrix of `data` (N × c): block `(i, j)` is row
/// `start_row + i + j` of `data`, transposed into a column.
pub fn block_hankel(data: &DMatrix<f64>, start_row: usize, block_rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let c = data.ncols();
    let required = start_row + block_rows + cols.max(1) - 1;
    if block_rows == 0 || cols == 0 || required > data.nrows() {
        return Err(Error::InsufficientSamples {
            required,
            available: data.nrows(),
        });
    }
    let mut out = DMatrix::zeros(block_rows * c, cols);
    for i in 0..block_rows {
        for j in 0..cols {
            let row = data.row(start_row + i + j);
            for ch in 0..c {
                out[(i * c + ch, j)] = row[ch];
            }
        }
    }
    Ok(out)
}

/// `Ĥ_fp = Y_f Π⊥ Z_pᵀ (Z_p Π⊥ Z_pᵀ)⁻¹` with `Π⊥` the projector onto the
/// orthogonal complement of the row space of `U_f`, computed as the `Z_p`
/// block of the joint regression of `Y_f` on `[Z_p; U_f]`.
pub fn project_hfp(y_f: &DMatrix<f64>, z_p: &DMatrix<f64>, u_f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = y_f.ncols();
    if z_p.ncols() != cols {
        return Err(Error::dim("Z_p (columns)", cols, z_p.ncols()));
    }
    if u_f.ncols() != cols {
        return Err(Error::dim("U_f (columns)", cols, u_f.ncols()));
    }
    let u_cond = linalg::condition_number(u_f);
    if u_cond > MAX_CONDITION {
        return Err(Error::RankDeficient { condition: u_cond });
    }
    let (rz, ru) = (z_p.nrows(), u_f.nrows());
    let mut regressor = DMatrix::zeros(rz + ru, cols);
    regressor.rows_mut(0, rz).copy_from(z_p);
    regressor.rows_mut(rz, ru).copy_from(u_f);
    let fit = linalg::regress(y_f, &regressor, RCOND);
    Ok(fit.coef.columns(0, rz).into_owned())
}

/// Free parameters of an order-`n` innovation model with `m` inputs and
/// `p` outputs: `n(m + p) + n p + p m`.
pub fn aic_parameter_count(n: usize, m: usize, p: usize) -> usize {
    n * (m + p) + n * p + p * m
}

#[derive(Debug, Clone)]
pub struct AicCandidate {
    pub order: usize,
    pub residual_covariance: DMatrix<f64>,
    pub n_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicScore {
    pub order: usize,
    /// `None` when the residual covariance was singular.
    pub score: Option<f64>,
}

/// Picks the order minimizing `N log det Σ̂_e(n) + 2 k(n)`; ties go to the
/// smaller order. Singular covariances are skipped. A single candidate is
/// returned as is.
pub fn aic_order_select(candidates: &[AicCandidate], n_samples: usize) -> Result<(usize, Vec<AicScore>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("AIC needs at least one candidate order".into()));
    }
    let scores: Vec<AicScore> = candidates
        .iter()
        .map(|c| {
            let det = c.residual_covariance.determinant();
            let score = if det > 0.0 && det.is_finite() {
                Some(n_samples as f64 * det.ln() + 2.0 * c.n_params as f64)
            } else {
                log::warn!("AIC: order {} skipped, residual covariance is singular", c.order);
                None
            };
            AicScore { order: c.order, score }
        })
        .collect();
    if candidates.len() == 1 {
        return Ok((candidates[0].order, scores));
    }
    let best = scores
        .iter()
        .filter_map(|s| s.score.map(|v| (s.order, v)))
        .fold(None, |best: Option<(usize, f64)>, (order, v)| match best {
            Some((bo, bv)) if bv < v || (bv == v && bo <= order) => Some((bo, bv)),
            _ => Some((order, v)),
        });
    best.map(|(o, _)| (o, scores)).ok_or(Error::NoValidOrder)
}

#[derive(Debug, Clone)]
pub struct IdentificationReport {
    pub model: StateSpaceModel,
    /// Offsets removed before identification.
    pub operating_point: OperatingPoint,
    /// Singular values of `Ĥ_fp Z_p`, nonincreasing.
    pub singular_values: Vec<f64>,
    pub numerical_rank: usize,
    pub chosen_order: usize,
    pub aic_scores: Option<Vec<AicScore>>,
    pub fit_train: Vec<f64>,
    pub fit_valid: Option<Vec<f64>>,
    /// `‖Γ_top A - Γ_bottom‖ / ‖Γ‖` for the least-squares shift matrix.
    pub shift_residual: f64,
    /// Normalized `(1/N) Ê_f U_fᵀ`; close to zero under open-loop excitation.
    pub open_loop_correlation: f64,
    pub n_train: usize,
    pub future: usize,
    pub past: usize,
}

impl IdentificationReport {
    /// Simulation fit of the identified model on held-out data.
    pub fn validate(&mut self, valid: &Dataset) -> Result<Vec<f64>> {
        let fit = simulation_fit(&self.model, &self.operating_point, valid)?;
        self.fit_valid = Some(fit.clone());
        Ok(fit)
    }

    /// Plaintext summary: singular values, AIC table and fits.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "# N4SID identification report");
        let _ = writeln!(s, "training_samples = {}", self.n_train);
        let _ = writeln!(s, "future_horizon = {}", self.future);
        let _ = writeln!(s, "past_horizon = {}", self.past);
        let _ = writeln!(s, "chosen_order = {}", self.chosen_order);
        let _ = writeln!(s, "numerical_rank = {}", self.numerical_rank);
        let _ = writeln!(s, "shift_invariance_residual = {:e}", self.shift_residual);
        let _ = writeln!(s, "open_loop_correlation = {:e}", self.open_loop_correlation);
        let _ = writeln!(s, "predictor_stable = {}", self.model.predictor_stable());
        let _ = writeln!(s, "fit_train = {:?}", self.fit_train);
        if let Some(v) = &self.fit_valid {
            let _ = writeln!(s, "fit_valid = {v:?}");
        }
        let _ = writeln!(s, "singular_values = {:?}", self.singular_values);
        if let Some(scores) = &self.aic_scores {
            let _ = writeln!(s, "\n[aic]");
            for sc in scores {
                match sc.score {
                    Some(v) => {
                        let _ = writeln!(s, "order_{} = {v:?}", sc.order);
                    }
                    None => {
                        let _ = writeln!(s, "# order_{} skipped (singular residual covariance)", sc.order);
                    }
                }
            }
        }
        s
    }
}

/// Detrends `data` by `op`, estimates the initial state on a leading
/// window and scores a pure simulation against the measured outputs.
pub fn simulation_fit(model: &StateSpaceModel, op: &OperatingPoint, data: &Dataset) -> Result<Vec<f64>> {
    let (u, y) = detrended(data, op);
    let window = data.len().min(200.max(10 * model.order()));
    let x0 = model.estimate_initial_state(&u, &y, window)?;
    let y_sim = model.simulate(&u, &x0, None)?;
    fit_percent(&y, &y_sim)
}

fn detrended(data: &Dataset, op: &OperatingPoint) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut u = data.u().clone();
    let mut y = data.y().clone();
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col.add_scalar_mut(-op.u[j]);
    }
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col.add_scalar_mut(-op.y[j]);
    }
    (u, y)
}

struct Candidate {
    model: StateSpaceModel,
    residual_covariance: DMatrix<f64>,
}

/// Recovers an order-`n` model from the estimated state sequence.
///
/// `y_k = C x_k + D u_k + e_k` gives `C`, `D` and the innovations; then
/// `x_{k+1} = A x_k + B u_k + K e_k`. Regressing on `e_k` instead of `y_k`
/// is the same column space (`y = Cx + Du + e`), so the predictor-form
/// coefficients `A_K = A - KC`, `B - KD` follow without re-solving.
fn recover_model(
    states: &DMatrix<f64>,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ts: f64,
    output_floor: f64,
    gain: GainEstimate,
) -> Result<Candidate> {
    let n = states.nrows();
    let m = u.nrows();
    let p = y.nrows();
    let cols = states.ncols();

    let mut xu = DMatrix::zeros(n + m, cols);
    xu.rows_mut(0, n).copy_from(states);
    xu.rows_mut(n, m).copy_from(u);
    let out_fit = linalg::regress(y, &xu, RCOND);
    let c = out_fit.coef.columns(0, n).into_owned();
    let d = out_fit.coef.columns(n, m).into_owned();
    let innovations = y - &out_fit.coef * &xu;

    let next = states.columns(1, cols - 1).into_owned();
    let include_gain = innovations.norm() > NEGLIGIBLE_INNOVATION * y.norm();
    let width = if include_gain { n + m + p } else { n + m };
    let mut reg = DMatrix::zeros(width, cols - 1);
    reg.rows_mut(0, n + m).copy_from(&xu.columns(0, cols - 1));
    if include_gain {
        reg.rows_mut(n + m, p).copy_from(&innovations.columns(0, cols - 1));
    }
    let st_fit = linalg::regress(&next, &reg, RCOND);
    let a = st_fit.coef.columns(0, n).into_owned();
    let b = st_fit.coef.columns(n, m).into_owned();
    let mut residual_covariance = linalg::second_moment(&innovations);
    for i in 0..p {
        residual_covariance[(i, i)] += output_floor;
    }

    let k = match (include_gain, gain) {
        (false, _) => DMatrix::zeros(n, p),
        (true, GainEstimate::Regression) => st_fit.coef.columns(n + m, p).into_owned(),
        (true, GainEstimate::Riccati) => {
            // w = x⁺ - A x - B u, v = ê; the ê-block of the regression is
            // orthogonal to (x, u) so A, B are unaffected by dropping it
            let ab = st_fit.coef.columns(0, n + m);
            let w = &next - ab * reg.rows(0, n + m);
            let v = innovations.columns(0, cols - 1);
            let scale = (cols - 1) as f64;
            let q = linalg::symmetrize(&(&w * w.transpose() / scale));
            let s_wv = &w * v.transpose() / scale;
            let mut r = linalg::symmetrize(&(v * v.transpose() / scale));
            for i in 0..p {
                r[(i, i)] += output_floor;
            }
            let a_hat = st_fit.coef.columns(0, n).into_owned();
            let c_hat = out_fit.coef.columns(0, n).into_owned();
            crate::model::solve_dare(&a_hat, &c_hat, &q, &r, Some(&s_wv))?.k
        }
    };
    let model = StateSpaceModel::new(a, b, c, d, k, ts)?;
    Ok(Candidate {
        model,
        residual_covariance,
    })
}

/// Runs N4SID on `data`.
pub fn estimate_n4sid(data: &Dataset, cfg: &N4sidConfig) -> Result<IdentificationReport> {
    let n_samples = data.len();
    let (m, p) = (data.n_inputs(), data.n_outputs());
    cfg.validate(n_samples, m, p)?;
    let (f, past) = (cfg.future, cfg.past);
    let cols = n_samples - f - past + 1;

    let operating_point = match cfg.detrend {
        Detrend::None => OperatingPoint::zero(m, p),
        Detrend::Mean => OperatingPoint {
            u: data.u().column_iter().map(|c| c.mean()).collect(),
            y: data.y().column_iter().map(|c| c.mean()).collect(),
        },
    };
    let (u, y) = detrended(data, &operating_point);
    let mut z = DMatrix::zeros(n_samples, m + p);
    z.columns_mut(0, m).copy_from(&u);
    z.columns_mut(m, p).copy_from(&y);

    // Joint input excitation over past and future windows.
    let u_all = block_hankel(&u, 0, past + f, cols)?;
    let cond = linalg::condition_number(&u_all);
    if cond > MAX_CONDITION {
        return Err(Error::RankDeficient { condition: cond });
    }

    let z_p = block_hankel(&z, 0, past, cols)?;
    let u_f = block_hankel(&u, past, f, cols)?;
    let y_f = block_hankel(&y, past, f, cols)?;
    let h_fp = project_hfp(&y_f, &z_p, &u_f)?;
    let projected = &h_fp * &z_p;

    // SVD of the wide (f·p × cols) matrix through the QR of its transpose.
    let qr = projected.transpose().qr();
    let svd = qr.r().transpose().svd(true, false);
    let mut order_idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    order_idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let singular_values: Vec<f64> = order_idx.iter().map(|&i| svd.singular_values[i]).collect();
    let left = svd.u.as_ref().expect("U requested");
    let s_max = singular_values.first().copied().unwrap_or(0.0);
    let numerical_rank = singular_values.iter().filter(|&&s| s > RCOND * s_max && s > 0.0).count();

    let (n_min, n_max) = cfg.order.range();
    if let OrderSelection::Fixed { order } = cfg.order {
        if order > numerical_rank {
            return Err(Error::OrderExceedsRank {
                order,
                rank: numerical_rank,
            });
        }
    }
    if n_min > numerical_rank {
        return Err(Error::OrderExceedsRank {
            order: n_min,
            rank: numerical_rank,
        });
    }

    let u_cols = u.rows(past, cols).transpose();
    let y_cols = y.rows(past, cols).transpose();
    let mean_var = y_cols.iter().map(|v| v * v).sum::<f64>() / (cols * p) as f64;
    let floor = COVARIANCE_FLOOR * mean_var.max(f64::MIN_POSITIVE);

    let top = n_max.min(numerical_rank);
    if top < n_max {
        log::warn!("orders above the numerical rank {numerical_rank} skipped");
    }
    let mut gamma_full = DMatrix::zeros(f * p, top);
    let mut states_full = DMatrix::zeros(top, cols);
    for (col, &i) in order_idx.iter().take(top).enumerate() {
        let s = singular_values[col];
        let ui = left.column(i);
        gamma_full.column_mut(col).copy_from(&(ui * s.sqrt()));
        let row = (ui.transpose() * &projected) / s.sqrt();
        states_full.row_mut(col).copy_from(&row);
    }

    let mut candidates = Vec::new();
    for n in n_min..=top {
        let states = states_full.rows(0, n).into_owned();
        let cand = recover_model(&states, &u_cols, &y_cols, data.ts(), floor, cfg.gain)?;
        candidates.push((n, cand));
    }

    let (chosen_order, aic_scores) = match cfg.order {
        OrderSelection::Fixed { order } => (order, None),
        OrderSelection::Aic { .. } => {
            let aic_in: Vec<AicCandidate> = candidates
                .iter()
                .map(|(n, c)| AicCandidate {
                    order: *n,
                    residual_covariance: c.residual_covariance.clone(),
                    n_params: aic_parameter_count(*n, m, p),
                })
                .collect();
            let (order, scores) = aic_order_select(&aic_in, cols)?;
            (order, Some(scores))
        }
    };
    let model = candidates
        .into_iter()
        .find(|(n, _)| *n == chosen_order)
        .map(|(_, c)| c.model)
        .expect("chosen order is a candidate");

    let gamma = gamma_full.columns(0, chosen_order).into_owned();
    let shift_residual = shift_invariance_residual(&gamma, p);

    let innovations_model = {
        let x0 = model.estimate_initial_state(&u, &y, n_samples.min(200))?;
        &y - model.simulate(&u, &x0, None)?
    };
    let open_loop_correlation = open_loop_correlation(&innovations_model, &u, past, f, cols)?;

    let train = Dataset::new(data.u().clone(), data.y().clone(), data.ts())?;
    let fit_train = simulation_fit(&model, &operating_point, &train)?;

    Ok(IdentificationReport {
        model,
        operating_point,
        singular_values,
        numerical_rank,
        chosen_order,
        aic_scores,
        fit_train,
        fit_valid: None,
        shift_residual,
        open_loop_correlation,
        n_train: n_samples,
        future: f,
        past,
    })
}

/// Relative residual of the least-squares shift equation on `Γ̂_f`.
pub fn shift_invariance_residual(gamma: &DMatrix<f64>, p: usize) -> f64 {
    let rows = gamma.nrows();
    if rows <= p || gamma.ncols() == 0 {
        return 0.0;
    }
    let top = gamma.rows(0, rows - p).into_owned();
    let bottom = gamma.rows(p, rows - p).into_owned();
    // top · A ≈ bottom  ⇔  Aᵀ topᵀ ≈ bottomᵀ
    let fit = linalg::regress(&bottom.transpose(), &top.transpose(), RCOND);
    let a = fit.coef.transpose();
    (&top * &a - &bottom).norm() / gamma.norm()
}

fn open_loop_correlation(
    residual: &DMatrix<f64>,
    u: &DMatrix<f64>,
    start: usize,
    f: usize,
    cols: usize,
) -> Result<f64> {
    let e_f = block_hankel(residual, start, f, cols)?;
    let u_f = block_hankel(u, start, f, cols)?;
    let cross = &e_f * u_f.transpose() / cols as f64;
    let scale = (e_f.norm() * u_f.norm()) / cols as f64;
    Ok(if scale > 0.0 { cross.norm() / scale } else { 0.0 })
}

/// First `count` Markov parameters stacked vertically (count·p × m).
pub fn stacked_markov(model: &StateSpaceModel, count: usize) -> DMatrix<f64> {
    let params = model.markov_parameters(count);
    let (p, m) = (model.n_outputs(), model.n_inputs());
    let mut out = DMatrix::zeros(count * p, m);
    for (i, h) in params.iter().enumerate() {
        out.view_mut((i * p, 0), (p, m)).copy_from(h);
    }
    out
}
