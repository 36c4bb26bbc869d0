//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
/// Observed-entry indicator, `true` where a value is present.
pub type Mask = DMatrix<bool>;

/// Replaces `m` by `(m + mᵀ)/2`, failing if the correction exceeds `tol`.
pub fn symmetrize(m: &Matrix, tol: f64) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let correction = (&sym - m).amax();
    if correction > tol {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {correction:e})"
        )));
    }
    Ok(sym)
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Frobenius inner product `tr(aᵀ b)`.
pub fn frob_dot(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `tr(a b)` for square matrices without forming the product.
pub fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Cholesky factor of a symmetric positive definite matrix, with log-determinant and inverse.
pub struct SpdFactor {
    pub log_det: f64,
    pub inverse: Matrix,
}

pub fn spd_factor(m: &Matrix) -> Result<SpdFactor> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..m.nrows() {
        log_det += 2.0 * l[(i, i)].ln();
    }
    let inverse = chol.inverse();
    Ok(SpdFactor { log_det, inverse })
}

/// Extracts the principal submatrix on `idx`.
pub fn submatrix(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Scales a covariance-like matrix to unit diagonal. Zero diagonal entries are left as identity rows.
pub fn to_correlation(m: &Matrix) -> Matrix {
    let d = m.nrows();
    let scale: Vec<f64> = (0..d)
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] * scale[i] * scale[j]
        }
    })
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}
