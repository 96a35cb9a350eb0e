//! Small dense linear-algebra helpers shared by the posterior, ELBO and
//! diagnostics code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factorization that reports what failed.
pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Chol> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `log det A` from the Cholesky factor of `A`.
pub fn log_det(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Cheap condition estimate `(max Lᵢᵢ / min Lᵢᵢ)²` from a Cholesky factor.
pub fn condition_estimate(chol: &Chol) -> f64 {
    let d = chol.l_dirty().diagonal();
    let max = d.iter().cloned().fold(0.0_f64, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    (max / min).powi(2)
}

/// Condition estimate from the diagonal of an un-factorizable matrix.
pub fn diagonal_condition(m: &DMatrix<f64>) -> f64 {
    let d = m.diagonal();
    let max = d.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    let min = d.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `L x = b` for the lower Cholesky factor.
pub fn solve_lower(chol: &Chol, b: &DVector<f64>) -> DVector<f64> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

pub fn solve_lower_mat(chol: &Chol, b: &DMatrix<f64>) -> DMatrix<f64> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

/// Lower-triangular factor with the strictly-upper part zeroed.
pub fn lower(chol: &Chol) -> DMatrix<f64> {
    chol.l()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
