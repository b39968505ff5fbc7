//! Dense symmetric factorizations.
//!
//! nalgebra is the matrix type used across the public API; the heavy
//! factorizations (eigendecomposition and Cholesky of covariance matrices
//! that reach 10,000 x 10,000 at desk scale) are delegated to faer, which
//! stays fast at those sizes on a single core. The conversion copies, which
//! is negligible next to the factorization itself.

use faer::{Mat, Side};
use nalgebra::DMatrix;

use crate::error::{Result, SglmmError};

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let f = to_faer(a);
    let llt = f.llt(Side::Lower).map_err(|_| {
        SglmmError::Numerical("Cholesky factorization failed: matrix is not positive definite".into())
    })?;
    let l = llt.L();
    Ok(DMatrix::from_fn(n, n, |i, j| if j <= i { l[(i, j)] } else { 0.0 }))
}

/// Leading `k` eigenpairs of a symmetric matrix, eigenvalues in
/// non-increasing order, eigenvectors as columns.
pub(crate) fn sym_eigen_topk(a: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if k > n {
        return Err(SglmmError::InvalidArgument(format!(
            "requested {k} eigenpairs from a {n} x {n} matrix"
        )));
    }
    let f = to_faer(a);
    let evd = f
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| SglmmError::Numerical("symmetric eigendecomposition did not converge".into()))?;
    drop(f);
    // faer sorts eigenvalues in nondecreasing order; take the trailing k.
    let u = evd.U();
    let s = evd.S();
    let mut vals = Vec::with_capacity(k);
    let mut vecs = DMatrix::zeros(n, k);
    for j in 0..k {
        let src = n - 1 - j;
        vals.push(s[src]);
        for i in 0..n {
            vecs[(i, j)] = u[(i, src)];
        }
    }
    Ok((vals, vecs))
}
