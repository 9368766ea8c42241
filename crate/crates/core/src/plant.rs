//! Nonlinear 2×2 surrogate of a fluid catalytic cracking unit.
//!
//! Inputs are catalyst circulation `F_s` and regenerator air `F_a`
//! (kg/s); outputs are riser outlet temperature `T_ro` and regenerator
//! temperature `T_rg` (K). Two stable linear cores are blended by a
//! sigmoid of the regenerator-temperature deviation, then passed through a
//! static quadratic output map:
//!
//! ```text
//! w   = σ(s · (z_b − c))
//! x⁺  = (1−w)(A_lo x + B_lo δu) + w (A_hi x + B_hi δu)
//! z   = (1−w)(C_lo x + D_lo δu) + w (C_hi x + D_hi δu) + G d
//! y   = y_ss + z + β ∘ z² + v
//! ```
//!
//! with `δu = u − u_ss` and `z_b` the blending channel of `C_lo x`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("matrix {name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// One linear regime, matrices given as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCore {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl LinearCore {
    pub fn from_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Self {
        LinearCore {
            a: matrix_to_rows(a),
            b: matrix_to_rows(b),
            c: matrix_to_rows(c),
            d: matrix_to_rows(d),
        }
    }
}

#[derive(Debug, Clone)]
struct Core {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Core {
    fn build(name: &str, lc: &LinearCore, m: usize, p: usize) -> Result<Self> {
        let a = rows_to_matrix(&format!("{name}.a"), &lc.a)?;
        let b = rows_to_matrix(&format!("{name}.b"), &lc.b)?;
        let c = rows_to_matrix(&format!("{name}.c"), &lc.c)?;
        let d = rows_to_matrix(&format!("{name}.d"), &lc.d)?;
        let n = a.nrows();
        let shape_ok = a.shape() == (n, n) && b.shape() == (n, m) && c.shape() == (p, n) && d.shape() == (p, m);
        if n == 0 || !shape_ok {
            return Err(Error::Config(format!(
                "regime {name}: expected A {n}×{n}, B {n}×{m}, C {p}×{n}, D {p}×{m}, got {:?} {:?} {:?} {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        let rho = spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::Config(format!("regime {name} is unstable (spectral radius {rho:.6})")));
        }
        Ok(Core { a, b, c, d })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceEntry {
    /// Added to the core output before the static nonlinearity.
    #[default]
    Output,
    /// Added to the input deviation.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub low: LinearCore,
    pub high: LinearCore,
    /// Output channel of the low core driving the regime weight.
    pub blend_channel: usize,
    /// Deviation at which both regimes weigh 1/2.
    pub blend_center: f64,
    pub blend_sharpness: f64,
    /// Quadratic coefficient β per output.
    pub output_curvature: Vec<f64>,
    pub noise_std: Vec<f64>,
    /// p × n_d for output entry, m × n_d for input entry.
    pub disturbance_gain: Vec<Vec<f64>>,
    #[serde(default)]
    pub disturbance_entry: DisturbanceEntry,
    pub u_ss: Vec<f64>,
    pub y_ss: Vec<f64>,
    pub ts: f64,
}

impl PlantConfig {
    pub fn n_inputs(&self) -> usize {
        self.u_ss.len()
    }
    pub fn n_outputs(&self) -> usize {
        self.y_ss.len()
    }
    pub fn n_disturbances(&self) -> usize {
        self.disturbance_gain.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.n_inputs(), self.n_outputs());
        if m == 0 || p == 0 {
            return Err(Error::Config("plant needs at least one input and one output".into()));
        }
        let lo = Core::build("low", &self.low, m, p)?;
        let hi = Core::build("high", &self.high, m, p)?;
        if lo.a.nrows() != hi.a.nrows() {
            return Err(Error::Config("regimes must share the state dimension".into()));
        }
        if self.blend_channel >= p {
            return Err(Error::Config(format!("blend_channel {} out of range", self.blend_channel)));
        }
        if !(self.blend_sharpness > 0.0) || !self.blend_center.is_finite() {
            return Err(Error::Config("blend_sharpness must be positive and blend_center finite".into()));
        }
        if self.output_curvature.len() != p || self.noise_std.len() != p {
            return Err(Error::Config(format!("output_curvature and noise_std need {p} entries")));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        let g = rows_to_matrix("disturbance_gain", &self.disturbance_gain)?;
        let want = match self.disturbance_entry {
            DisturbanceEntry::Output => p,
            DisturbanceEntry::Input => m,
        };
        if g.nrows() != want {
            return Err(Error::Config(format!("disturbance_gain needs {want} rows, has {}", g.nrows())));
        }
        if !(self.ts > 0.0) {
            return Err(Error::Config("plant ts must be positive".into()));
        }
        Ok(())
    }

    /// Regime weight in [0, 1] for a blending-channel deviation.
    pub fn regime_weight(&self, proxy: f64) -> f64 {
        1.0 / (1.0 + (-self.blend_sharpness * (proxy - self.blend_center)).exp())
    }

    /// Steady-state gain of the core frozen at regime weight `w`.
    pub fn small_signal_gain(&self, w: f64) -> Result<DMatrix<f64>> {
        let (m, p) = (self.n_inputs(), self.n_outputs());
        let lo = Core::build("low", &self.low, m, p)?;
        let hi = Core::build("high", &self.high, m, p)?;
        let blend = |x: &DMatrix<f64>, y: &DMatrix<f64>| x * (1.0 - w) + y * w;
        let a = blend(&lo.a, &hi.a);
        let n = a.nrows();
        let inv = (DMatrix::identity(n, n) - a)
            .try_inverse()
            .ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
        Ok(blend(&lo.c, &hi.c) * inv * blend(&lo.b, &hi.b) + blend(&lo.d, &hi.d))
    }
}

/// The repository's canonical surrogate.
///
/// Equilibrium at `u_ss = (294, 26)` kg/s, `y_ss = (777, 965)` K. The high
/// regime (regenerator more than ~15 K above nominal) has roughly 1.5×
/// the steady-state gain and faster poles.
pub fn make_default_fccu() -> PlantConfig {
    let a_lo = DMatrix::from_row_slice(3, 3, &[0.94, 0.0, 0.0, 0.0, 0.965, 0.0, 0.03, 0.02, 0.90]);
    let b_lo = DMatrix::from_row_slice(3, 2, &[0.03, 0.06, -0.015, 0.2, 0.0, 0.0]);
    let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.2]);
    let d = DMatrix::zeros(2, 2);
    let a_hi = DMatrix::from_row_slice(3, 3, &[0.92, 0.0, 0.0, 0.0, 0.955, 0.0, 0.03, 0.02, 0.88]);
    let b_hi = &b_lo * 2.0;
    PlantConfig {
        low: LinearCore::from_matrices(&a_lo, &b_lo, &c, &d),
        high: LinearCore::from_matrices(&a_hi, &b_hi, &c, &d),
        blend_channel: 1,
        blend_center: 15.0,
        blend_sharpness: 0.3,
        output_curvature: vec![0.002, 0.001],
        noise_std: vec![0.0, 0.0],
        disturbance_gain: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        disturbance_entry: DisturbanceEntry::Output,
        u_ss: vec![294.0, 26.0],
        y_ss: vec![777.0, 965.0],
        ts: 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: f64,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct FccuPlant {
    cfg: PlantConfig,
    lo: Core,
    hi: Core,
    g: DMatrix<f64>,
    state: PlantState,
    rng: ChaCha8Rng,
    noise: Vec<Option<Normal<f64>>>,
}

impl FccuPlant {
    /// Plant at equilibrium (`x = 0`, `t = 0`).
    pub fn new(cfg: PlantConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (m, p) = (cfg.n_inputs(), cfg.n_outputs());
        let lo = Core::build("low", &cfg.low, m, p)?;
        let hi = Core::build("high", &cfg.high, m, p)?;
        let g = rows_to_matrix("disturbance_gain", &cfg.disturbance_gain)?;
        let noise = cfg
            .noise_std
            .iter()
            .map(|&s| if s > 0.0 { Normal::new(0.0, s).ok() } else { None })
            .collect();
        let n = lo.a.nrows();
        Ok(FccuPlant {
            cfg,
            lo,
            hi,
            g,
            state: PlantState {
                x: DVector::zeros(n),
                t: 0.0,
                step: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }
    pub fn state(&self) -> &PlantState {
        &self.state
    }
    pub fn order(&self) -> usize {
        self.lo.a.nrows()
    }
    pub fn set_state(&mut self, x: DVector<f64>) -> Result<()> {
        if x.len() != self.order() {
            return Err(Error::dim("plant state", self.order(), x.len()));
        }
        self.state.x = x;
        Ok(())
    }

    /// Regime weight at the current state.
    pub fn regime_weight(&self) -> f64 {
        let proxy = (self.lo.c.row(self.cfg.blend_channel) * &self.state.x)[0];
        self.cfg.regime_weight(proxy)
    }

    fn check(&self, u: &DVector<f64>, d: &DVector<f64>) -> Result<()> {
        if u.len() != self.cfg.n_inputs() {
            return Err(Error::dim("plant input", self.cfg.n_inputs(), u.len()));
        }
        if d.len() != self.cfg.n_disturbances() {
            return Err(Error::dim("disturbance", self.cfg.n_disturbances(), d.len()));
        }
        Ok(())
    }

    fn input_deviation(&self, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut du = u - DVector::from_column_slice(&self.cfg.u_ss);
        if self.cfg.disturbance_entry == DisturbanceEntry::Input {
            du += &self.g * d;
        }
        du
    }

    /// Noise-free output at the current state under input `u`.
    pub fn output_clean(&self, u: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(u, d)?;
        let w = self.regime_weight();
        let du = self.input_deviation(u, d);
        let x = &self.state.x;
        let mut z = (&self.lo.c * x + &self.lo.d * &du) * (1.0 - w) + (&self.hi.c * x + &self.hi.d * &du) * w;
        if self.cfg.disturbance_entry == DisturbanceEntry::Output {
            z += &self.g * d;
        }
        Ok(DVector::from_fn(z.len(), |i, _| {
            self.cfg.y_ss[i] + z[i] + self.cfg.output_curvature[i] * z[i] * z[i]
        }))
    }

    /// Measured output at the current state (noise drawn from the run RNG).
    pub fn measure(&mut self, u: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
        let mut y = self.output_clean(u, d)?;
        for (i, dist) in self.noise.iter().enumerate() {
            if let Some(dist) = dist {
                y[i] += dist.sample(&mut self.rng);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: self.state.t });
        }
        Ok(y)
    }

    /// Advances one sampling interval under input `u`.
    pub fn advance(&mut self, u: &DVector<f64>, d: &DVector<f64>) -> Result<()> {
        self.check(u, d)?;
        let w = self.regime_weight();
        let du = self.input_deviation(u, d);
        let x = &self.state.x;
        let next = (&self.lo.a * x + &self.lo.b * &du) * (1.0 - w) + (&self.hi.a * x + &self.hi.b * &du) * w;
        let t_next = self.state.t + self.cfg.ts;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t_next });
        }
        self.state.x = next;
        self.state.step += 1;
        self.state.t = self.state.step as f64 * self.cfg.ts;
        Ok(())
    }

    /// Advances under `(u, d)` and returns the measurement at the new time.
    pub fn step(&mut self, u: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
        self.advance(u, d)?;
        self.measure(u, d)
    }
}
