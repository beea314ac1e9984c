use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, PINV_REL_TOL};
use crate::prob::GaussianDensity;

/// `x ↦ offset + linear (x - anchor)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub offset: DVector<f64>,
    pub linear: DMatrix<f64>,
    pub anchor: DVector<f64>,
}

impl AffineMap {
    pub fn new(offset: DVector<f64>, linear: DMatrix<f64>, anchor: DVector<f64>) -> Result<Self> {
        check_dim(offset.len(), linear.nrows())?;
        check_dim(anchor.len(), linear.ncols())?;
        crate::error::check_finite(
            offset.iter().chain(linear.iter()).chain(anchor.iter()),
            "affine map",
        )?;
        Ok(AffineMap {
            offset,
            linear,
            anchor,
        })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.linear * (x - &self.anchor)
    }

    /// Image of a Gaussian under the map.
    pub fn pushforward(&self, g: &GaussianDensity) -> Result<GaussianDensity> {
        check_dim(self.anchor.len(), g.dim())?;
        let mean = self.apply(g.mean());
        let cov = linalg::symmetrize(&(&self.linear * g.cov() * self.linear.transpose()));
        GaussianDensity::new(mean, cov)
    }

    /// `E‖x − T(x)‖²` for `x ~ g`, computed from the moments.
    pub fn expected_squared_cost(&self, g: &GaussianDensity) -> Result<f64> {
        check_dim(self.anchor.len(), g.dim())?;
        check_dim(self.offset.len(), g.dim())?;
        let n = g.dim();
        let shift = g.mean() - self.apply(g.mean());
        let resid = DMatrix::identity(n, n) - &self.linear;
        Ok(shift.norm_squared() + (&resid * g.cov() * resid.transpose()).trace())
    }
}

fn require_spd(c: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if c.clone().cholesky().is_none() {
        return Err(Error::Singular(what));
    }
    Ok(())
}

/// Affine coupling `x ↦ m₂ + Σ₂^{1/2} Σ₁^{-1/2} (x − m₁)`.
pub fn gaussian_affine_coupling(g1: &GaussianDensity, g2: &GaussianDensity) -> Result<AffineMap> {
    check_dim(g1.dim(), g2.dim())?;
    require_spd(g1.cov(), "source covariance is singular")?;
    let linear = linalg::matrix_sqrt(g2.cov())? * linalg::inv_sqrt(g1.cov())?;
    AffineMap::new(g2.mean().clone(), linear, g1.mean().clone())
}

/// Optimal (least mean-square displacement) map between two Gaussians,
/// with symmetric linear part `Σ₂^{1/2} [Σ₂^{1/2} Σ₁ Σ₂^{1/2}]^{-1/2} Σ₂^{1/2}`.
pub fn gaussian_optimal_map(g1: &GaussianDensity, g2: &GaussianDensity) -> Result<AffineMap> {
    check_dim(g1.dim(), g2.dim())?;
    require_spd(g1.cov(), "source covariance is singular")?;
    require_spd(g2.cov(), "target covariance is singular")?;
    let r2 = linalg::matrix_sqrt(g2.cov())?;
    let inner = linalg::symmetrize(&(&r2 * g1.cov() * &r2));
    let linear = linalg::symmetrize(&(&r2 * linalg::inv_sqrt(&inner)? * &r2));
    AffineMap::new(g2.mean().clone(), linear, g1.mean().clone())
}

/// Optimal map written through a factor `A` of the target covariance
/// (`A Aᵀ = Σ₂`): `x ↦ m₂ + A [Aᵀ Σ₁ A]^{-1/2} Aᵀ (x − m₁)`.
///
/// `A` may be rectangular or rank deficient; the inner inverse square root is
/// a pseudo-inverse.
pub fn gaussian_optimal_map_factored(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    factor: &DMatrix<f64>,
) -> Result<AffineMap> {
    let n = mean1.len();
    check_dim(n, cov1.nrows())?;
    check_dim(n, cov1.ncols())?;
    check_dim(n, mean2.len())?;
    check_dim(n, factor.nrows())?;
    let inner = linalg::symmetrize(&(factor.transpose() * cov1 * factor));
    let root = linalg::pinv_sqrt(&inner, PINV_REL_TOL)?;
    let linear = factor * root * factor.transpose();
    AffineMap::new(mean2.clone(), linear, mean1.clone())
}
