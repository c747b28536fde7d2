//! EWMA covariance estimation and symmetric square-root kernels.
//!
//! The estimator is the zero-mean exponentially weighted average of return
//! outer products, with weights `2^(-age/half_life)` normalized by their sum.
//! Square roots and inverse square roots go through the symmetric
//! eigendecomposition, flooring small eigenvalues so rank-deficient estimates
//! stay invertible.

use chrono::NaiveDate;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::ReturnPanel;
use crate::error::{Error, Result};

/// Relative eigenvalue floor applied on top of any caller-supplied floor.
pub const AUTO_EIGEN_FLOOR: f64 = 1e-12;

/// A dated symmetric positive-semidefinite covariance matrix.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    matrix: DMatrix<f64>,
    as_of: NaiveDate,
    half_life_days: usize,
    observation_count: usize,
}

impl CovarianceEstimate {
    /// Wraps a matrix, checking symmetry (1e-12 absolute) and PSD-ness
    /// (eigenvalues >= -1e-10).
    pub fn new(
        matrix: DMatrix<f64>,
        as_of: NaiveDate,
        half_life_days: usize,
        observation_count: usize,
    ) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Validation("covariance matrix must be square and nonempty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariance matrix has non-finite entries".into()));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "covariance not symmetric at ({i},{j}): {} vs {}",
                        matrix[(i, j)],
                        matrix[(j, i)]
                    )));
                }
            }
        }
        let eigen = symmetric_eigen(&matrix)?;
        if eigen.eigenvalues.iter().any(|&l| l < -1e-10) {
            return Err(Error::Validation(format!(
                "covariance not PSD: smallest eigenvalue {}",
                eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        Ok(Self { matrix, as_of, half_life_days, observation_count })
    }

    /// The N×N matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Estimation date; the estimate uses data strictly before it.
    pub fn as_of(&self) -> NaiveDate {
        self.as_of
    }

    /// Half-life used for the exponential weights.
    pub fn half_life_days(&self) -> usize {
        self.half_life_days
    }

    /// Number of observations that entered the estimate.
    pub fn observation_count(&self) -> usize {
        self.observation_count
    }

    /// Matrix dimension N.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Zero-mean EWMA covariance of all panel rows strictly before `as_of`.
///
/// Weights are `2^(-age/half_life)` with the most recent prior observation at
/// age 0, normalized by their sum, so a constant series of value `c` yields
/// variance exactly `c^2` for any window length.
pub fn ewma_covariance(
    panel: &ReturnPanel,
    half_life_days: usize,
    as_of: NaiveDate,
) -> Result<CovarianceEstimate> {
    if half_life_days == 0 {
        return Err(Error::InvalidParameter("half_life_days must be >= 1".into()));
    }
    let count = panel.rows_before(as_of);
    if count < 2 {
        return Err(Error::EmptyWindow(format!(
            "EWMA needs at least 2 observations before {as_of}, found {count}"
        )));
    }
    let n = panel.width();
    let returns = panel.returns();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut weight_sum = 0.0;
    // Oldest first: weights grow toward 1, so small terms accumulate first.
    for k in 0..count {
        let age = (count - 1 - k) as f64;
        let w = (-age / half_life_days as f64).exp2();
        weight_sum += w;
        let row = returns.row(k);
        for i in 0..n {
            let wi = w * row[i];
            for j in i..n {
                sum[(i, j)] += wi * row[j];
            }
        }
    }
    let mut matrix = sum / weight_sum;
    for i in 0..n {
        for j in 0..i {
            matrix[(i, j)] = matrix[(j, i)];
        }
    }
    CovarianceEstimate::new(matrix, as_of, half_life_days, count)
}

fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))
}

fn floored_transform(
    cov: &CovarianceEstimate,
    eigen_floor: f64,
    f: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let eigen = symmetric_eigen(cov.matrix())?;
    let values = eigen.eigenvalues.map(|l| f(l.max(eigen_floor)));
    let v = &eigen.eigenvectors;
    let out = v * DMatrix::from_diagonal(&values) * v.transpose();
    // Exact symmetry despite rounding in the triple product.
    Ok(0.5 * (&out + out.transpose()))
}

/// Symmetric S with `S·S = Σ_floored`, where eigenvalues below `eigen_floor`
/// are raised to the floor.
pub fn matrix_sqrt(cov: &CovarianceEstimate, eigen_floor: f64) -> Result<DMatrix<f64>> {
    if !(eigen_floor >= 0.0) {
        return Err(Error::InvalidParameter("eigen_floor must be >= 0".into()));
    }
    floored_transform(cov, eigen_floor, f64::sqrt)
}

/// Symmetric Q with `Q·Σ_floored·Q = I`; requires a strictly positive floor
/// so rank-deficient estimates stay invertible.
pub fn matrix_inv_sqrt(cov: &CovarianceEstimate, eigen_floor: f64) -> Result<DMatrix<f64>> {
    if !(eigen_floor > 0.0) {
        return Err(Error::InvalidParameter("eigen_floor must be > 0 for an inverse square root".into()));
    }
    floored_transform(cov, eigen_floor, |l| 1.0 / l.sqrt())
}

/// The floor actually applied by scenario generation: the caller's absolute
/// floor, but never below `AUTO_EIGEN_FLOOR` times the largest eigenvalue.
pub fn effective_eigen_floor(cov: &CovarianceEstimate, eigen_floor: f64) -> f64 {
    let lmax = cov
        .matrix()
        .diagonal()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(spectral_upper_bound(cov.matrix()));
    eigen_floor.max(AUTO_EIGEN_FLOOR * lmax)
}

// Row-sum (Gershgorin) bound on the largest eigenvalue; cheap and sufficient
// for a relative floor.
fn spectral_upper_bound(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}
