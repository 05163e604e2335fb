//! Small dense helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter added to the diagonal when a nominally positive definite matrix
/// fails to factor because of accumulated roundoff.
pub const FACTOR_JITTER: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Cholesky factor of a symmetric positive definite matrix, retrying once
/// with `jitter` on the diagonal.
pub fn spd_factor(m: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let shifted = m + DMatrix::identity(n, n) * jitter;
    Cholesky::new(shifted).ok_or(Error::NotPositiveDefinite { jitter })
}

/// `(Gram + lambda I)` with the diagonal shift applied.
pub fn regularized(gram: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = gram.nrows();
    gram + DMatrix::identity(n, n) * lambda
}

/// Quadratic form `x^T A^{-1} x` given a Cholesky factor of `A`.
pub fn inverse_quadratic_form(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    // x^T (L L^T)^{-1} x = |L^{-1} x|^2
    let mut y = x.clone();
    chol.l_dirty()
        .solve_lower_triangular_mut(&mut y);
    y.norm_squared()
}

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
