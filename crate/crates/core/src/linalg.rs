//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Condition-number ceiling (after unit-diagonal scaling) above which a
/// cross-product matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse of a symmetric positive-definite matrix.
///
/// The matrix is first scaled to unit diagonal; its condition number is
/// checked against [`MAX_CONDITION`] so that near-collinear designs fail
/// loudly instead of returning noise.
pub fn inverse_spd(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let singular = |condition: f64| Error::Singular {
        context: context.to_owned(),
        condition,
    };
    let diag = a.diagonal();
    if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(singular(f64::INFINITY));
    }
    let scale = DVector::from_iterator(n, diag.iter().map(|d| 1.0 / d.sqrt()));
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);

    let eig = SymmetricEigen::new(scaled.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition.is_finite() && condition <= MAX_CONDITION) {
        return Err(singular(condition));
    }

    let chol = scaled.cholesky().ok_or_else(|| singular(condition))?;
    let inv = chol.inverse();
    Ok(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * scale[i] * scale[j]))
}

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(X'X)^-1`.
    pub xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn ssr(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }
}

pub fn ols(x: &DMatrix<f64>, y: &[f64], context: &str) -> Result<OlsFit> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{context}: design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    let yv = DVector::from_column_slice(y);
    let xtx_inv = inverse_spd(&x.tr_mul(x), context)?;
    let beta = &xtx_inv * x.tr_mul(&yv);
    let fitted = x * &beta;
    let residuals = &yv - &fitted;
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        xtx_inv,
    })
}

/// Builds an `n x k` matrix from column vectors.
pub fn from_columns(columns: &[&[f64]]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}
