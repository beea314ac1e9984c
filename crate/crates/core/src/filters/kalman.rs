//! Exact Gaussian analysis and its artificial-time embedding.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{spd_solve, symmetrize};
use crate::prob::GaussianDensity;

fn check_observation(n: usize, h: &DMatrix<f64>, r: &DMatrix<f64>, y0: &DVector<f64>) -> Result<()> {
    check_dim(n, h.ncols())?;
    check_dim(h.nrows(), r.nrows())?;
    check_dim(h.nrows(), r.ncols())?;
    check_dim(h.nrows(), y0.len())
}

/// Conjugate Gaussian analysis:
/// `x̄ᵃ = x̄ − K (H x̄ − y₀)`, `Pᵃ = P − K H P`, `K = P Hᵀ (H P Hᵀ + R)⁻¹`.
pub fn kalman_update(
    prior: &GaussianDensity,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
) -> Result<GaussianDensity> {
    check_observation(prior.dim(), h, r, y0)?;
    let p = prior.cov();
    let pht = p * h.transpose();
    let innovation = symmetrize(&(h * &pht + r));
    let gain_t = spd_solve(&innovation, &pht.transpose())
        .map_err(|_| Error::Singular("innovation covariance"))?;
    let mean = prior.mean() - gain_t.transpose() * (h * prior.mean() - y0);
    let cov = symmetrize(&(p - &pht * &gain_t));
    GaussianDensity::new(mean, cov)
}

/// Forecast of a Gaussian through `x' = F x + c + N(0, Σ)`.
pub fn kalman_predict(
    prior: &GaussianDensity,
    f: &DMatrix<f64>,
    c: &DVector<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<GaussianDensity> {
    let mean = f * prior.mean() + c;
    let cov = symmetrize(&(f * prior.cov() * f.transpose() + noise_cov));
    GaussianDensity::new(mean, cov)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KalmanBucyMode {
    /// Forward Euler on the moment equations over `s ∈ [0, 1]`.
    #[default]
    Ode,
    /// `D` successive Kalman updates with noise covariance `D R`.
    Discrete,
}

/// Moments of the Kalman-Bucy flow
/// `dx̄/ds = −P Hᵀ R⁻¹ (H x̄ − y₀)`, `dP/ds = −P Hᵀ R⁻¹ H P` at `s = 1`.
pub fn kalman_bucy_moments(
    prior: &GaussianDensity,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    n_substeps: usize,
    mode: KalmanBucyMode,
) -> Result<GaussianDensity> {
    check_observation(prior.dim(), h, r, y0)?;
    if n_substeps == 0 {
        return Err(Error::invalid("n_substeps must be at least 1"));
    }
    match mode {
        KalmanBucyMode::Discrete => {
            let scaled = r * n_substeps as f64;
            let mut g = prior.clone();
            for _ in 0..n_substeps {
                g = kalman_update(&g, h, &scaled, y0)?;
            }
            Ok(g)
        }
        KalmanBucyMode::Ode => {
            let ds = 1.0 / n_substeps as f64;
            // R⁻¹ H, computed once
            let rinv_h = spd_solve(r, h).map_err(|_| Error::Singular("observation noise covariance"))?;
            let mut mean = prior.mean().clone();
            let mut p = prior.cov().clone();
            for _ in 0..n_substeps {
                let dmean = &p * rinv_h.transpose() * (h * &mean - y0);
                let dp = &p * h.transpose() * &rinv_h * &p;
                mean -= dmean * ds;
                p = symmetrize(&(&p - dp * ds));
            }
            GaussianDensity::new(mean, p)
        }
    }
}

/// `½ (H x̄ − y₀)ᵀ R⁻¹ (H x̄ − y₀) + ¼ tr(R⁻¹ H P Hᵀ)`; non-increasing along
/// the Kalman-Bucy flow, which is a gradient flow of this potential.
pub fn kalman_bucy_potential(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
) -> Result<f64> {
    check_observation(mean.len(), h, r, y0)?;
    let innov = h * mean - y0;
    let rinv_innov = spd_solve(r, &DMatrix::from_column_slice(innov.len(), 1, innov.as_slice()))?;
    let hph = h * cov * h.transpose();
    let rinv_hph = spd_solve(r, &hph)?;
    Ok(0.5 * innov.dot(&rinv_innov.column(0)) + 0.25 * rinv_hph.trace())
}
