//! Small dense helpers shared by the estimators and diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues within this distance below zero are reported as zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("matrix is not positive definite"))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Replace `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Ascending eigenvalues of a symmetric matrix, with tiny negatives clamped to zero.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = m.clone().symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig
        .iter()
        .map(|&v| if v < 0.0 && v > -EIGEN_CLAMP { 0.0 } else { v })
        .collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Positions of an order-(p, q) regressor inside the maximal (p_max, q_max) window:
/// `0..p` followed by `p_max..p_max + q`.
pub fn window_indices(p: usize, q: usize, p_max: usize) -> Vec<usize> {
    (0..p).chain(p_max..p_max + q).collect()
}

pub fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
}

pub fn sub_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vector(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
