//! Dense symmetric eigenvalues (Householder tridiagonalization followed by
//! implicit-shift QR, via nalgebra) and small helpers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const EIGEN_MAX_ITER: usize = 10_000;

/// Eigenvalues of `(H + Hᵀ)/2` in ascending order.
pub fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !h.is_square() {
        return Err(Error::Shape(format!(
            "eigenvalues of a {}x{} matrix",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.nrows() == 0 {
        return Ok(Vec::new());
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure {
            condition_estimate: f64::INFINITY,
        });
    }
    let sym = symmetrize(h);
    let eig = sym
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::EigenFailure {
            condition_estimate: condition_estimate(&sym),
        })?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

pub fn min_eigenvalue(h: &DMatrix<f64>) -> Result<f64> {
    symmetric_eigenvalues(h)?
        .first()
        .copied()
        .ok_or_else(|| Error::Shape("empty matrix".into()))
}

pub fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// 1-norm condition number `‖H‖₁ ‖H⁻¹‖₁`; infinite when `H` is singular.
pub fn condition_estimate(h: &DMatrix<f64>) -> f64 {
    let norm1 = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match h.clone().lu().try_inverse() {
        Some(inv) => norm1(h) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// `max |H − Hᵀ|`.
pub fn asymmetry(h: &DMatrix<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in 0..i {
            m = m.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    m
}
