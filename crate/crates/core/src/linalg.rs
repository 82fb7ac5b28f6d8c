//! Small dense linear-algebra helpers shared by the filter, the mixture
//! algebra and the simulator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Averages `m` with its transpose in place.
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

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// True when `|m_ij - m_ji| <= rel_tol * max(1, max|m|)` for all pairs.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    (0..n).all(|i| ((i + 1)..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

/// Log of the multivariate normal density `N(x; mean, cov)`.
pub fn log_gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let diff = x - mean;
    let solved = chol.l().solve_lower_triangular(&diff).ok_or_else(|| {
        Error::Numerical("triangular solve failed for covariance factor".into())
    })?;
    let maha = solved.norm_squared();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (maha + log_det + x.len() as f64 * LN_2PI))
}

pub fn gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    log_gaussian_density(x, mean, cov).map(f64::exp)
}

/// Squared Mahalanobis distance `(x - mean)^T cov^{-1} (x - mean)`.
pub fn mahalanobis_squared(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let diff = x - mean;
    Ok(diff.dot(&chol.solve(&diff)))
}

/// A factor `L` with `L L^T = m` for a symmetric positive-semidefinite `m`.
///
/// Uses the eigendecomposition so rank-deficient matrices (the
/// constant-velocity process noise is rank two) are handled.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eig = symmetrized(m.clone()).symmetric_eigen();
    let mut factor = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    factor
}

/// Positive definiteness by Cholesky.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Positive semidefiniteness by eigenvalues, with a relative tolerance.
pub fn is_positive_semidefinite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let eig = symmetrized(m.clone()).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    eig.eigenvalues.iter().all(|&v| v >= -1e-12 * scale)
}
