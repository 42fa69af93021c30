//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const SINGULAR_CONDITION: f64 = 1e12;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `d x = rhs` for symmetric positive definite `d`, rejecting
/// matrices whose 1-norm condition number exceeds `1e12`.
pub(crate) fn solve_spd(d: &DMatrix<f64>, rhs: &DVector<f64>, op: &'static str, what: &str) -> Result<DVector<f64>> {
    let chol = d
        .clone()
        .cholesky()
        .ok_or_else(|| Error::linalg(op, format!("{what} is not positive definite")))?;
    let cond = one_norm(d) * one_norm(&chol.inverse());
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::linalg(op, format!("{what} is singular (condition {cond:.3e})")));
    }
    Ok(chol.solve(rhs))
}

/// Inverse of a general square matrix with a condition report on failure.
pub(crate) fn invert(m: &DMatrix<f64>, op: &'static str, what: &str) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::linalg(op, format!("{what} is singular")))?;
    let cond = one_norm(m) * one_norm(&inv);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::linalg(op, format!("{what} is singular (condition {cond:.3e})")));
    }
    Ok(inv)
}

/// Moore–Penrose inverse of a symmetric positive semidefinite matrix.
/// Eigenvalues at or below `rel_tol · λ_max` are dropped; the returned
/// flag is set when any were.
pub(crate) fn pinv_psd(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * max;
    let mut dropped = false;
    let mut out = DMatrix::zeros(n, n);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > cut && ev > 0.0 {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / ev;
        } else {
            dropped = true;
        }
    }
    (out, dropped)
}
