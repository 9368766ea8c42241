//! Small dense linear-algebra helpers shared by the identification and
//! control modules.

use nalgebra::{Complex, DMatrix, DVector, SVD};

/// Result of a row-oriented least-squares regression `Y ≈ coef · Φ`.
#[derive(Debug, Clone)]
pub struct Regression {
    /// Coefficient matrix (targets × regressors).
    pub coef: DMatrix<f64>,
    /// Numerical rank of the regressor after truncation.
    pub rank: usize,
    /// Ratio of the largest to the smallest singular value of the regressor.
    pub condition: f64,
}

/// Least-squares fit of `targets` (q × N) onto `regressors` (r × N), both
/// with samples along the columns.
///
/// The regressor is reduced with a QR factorization of its transpose and
/// the triangular factor is pseudo-inverted through an SVD. Singular values
/// below `rcond · σ_max` are dropped, which yields the minimum-norm solution
/// when the regressor is rank deficient.
pub fn regress(targets: &DMatrix<f64>, regressors: &DMatrix<f64>, rcond: f64) -> Regression {
    assert_eq!(targets.ncols(), regressors.ncols(), "sample counts must agree");
    let r = regressors.nrows();
    if r == 0 {
        return Regression {
            coef: DMatrix::zeros(targets.nrows(), 0),
            rank: 0,
            condition: 1.0,
        };
    }
    let qr = regressors.transpose().qr();
    let q = qr.q();
    let r_factor = qr.r();
    // Φᵀ = Q R, so coefᵀ = R⁺ Qᵀ Yᵀ.
    let projected = q.transpose() * targets.transpose();
    let svd = SVD::new(r_factor, true, true);
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let s_min_all = if s.len() < r {
        0.0
    } else {
        s.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let condition = if s_min_all > 0.0 { s_max / s_min_all } else { f64::INFINITY };
    let cutoff = rcond * s_max;
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vᵀ requested");
    let mut rank = 0;
    let mut coef_t = DMatrix::zeros(r, targets.nrows());
    for (i, &sv) in s.iter().enumerate() {
        if sv <= cutoff || sv == 0.0 {
            continue;
        }
        rank += 1;
        let ui = u.column(i);
        let vi = v_t.row(i).transpose();
        let w = (ui.transpose() * &projected) / sv;
        coef_t += vi * w;
    }
    Regression {
        coef: coef_t.transpose(),
        rank,
        condition,
    }
}

/// Condition number (2-norm) of a matrix; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let s = m.singular_values();
    let max = s.max();
    let min = s.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().cloned().collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Sample covariance (1/N normalization) of the columns of `samples`
/// (channels × N) around zero mean.
pub fn second_moment(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.ncols().max(1) as f64;
    samples * samples.transpose() / n
}

pub fn dvector(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

/// Match two eigenvalue sets greedily by nearest distance and return the
/// largest pairwise distance.
pub fn eigenvalue_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut remaining: Vec<Complex<f64>> = b.to_vec();
    let mut worst = 0.0_f64;
    for za in a {
        let (idx, d) = remaining
            .iter()
            .enumerate()
            .map(|(i, zb)| (i, (za - zb).norm()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        worst = worst.max(d);
        remaining.swap_remove(idx);
    }
    worst
}
