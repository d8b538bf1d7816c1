//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Thin SVD with singular triplets sorted in non-increasing order.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

// nalgebra's bidiagonal SVD silently returns wrong factors on some
// rank-deficient inputs, so the decomposition goes through faer.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> Result<SortedSvd> {
    let (rows, cols) = m.shape();
    let svd = to_faer(m).thin_svd().map_err(|_| Error::SvdConvergence { rows, cols })?;
    let s = svd.S().column_vector();
    let k = rows.min(cols);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sigma = DVector::from_iterator(k, order.iter().map(|&i| s[i]));
    let u = from_faer(svd.U()).select_columns(order.iter());
    let v = from_faer(svd.V()).select_columns(order.iter());
    Ok(SortedSvd { u, sigma, v })
}

/// Singular values in non-increasing order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s = to_faer(m)
        .singular_values()
        .unwrap_or_else(|_| m.clone().singular_values().iter().copied().collect());
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol * sigma_max`.
pub(crate) fn numerical_rank(sigma: &[f64], rel_tol: f64) -> usize {
    match sigma.first() {
        Some(&s_max) if s_max > 0.0 => sigma.iter().filter(|&&s| s > rel_tol * s_max).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the column space of `m`, using a relative rank cut.
pub(crate) fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let svd = sorted_svd(m)?;
    let sigma: Vec<f64> = svd.sigma.iter().copied().collect();
    let r = numerical_rank(&sigma, rel_tol);
    Ok(svd.u.columns(0, r).into_owned())
}

/// Largest singular value.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
