use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::log_sum_exp;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{self, is_symmetric, sym_eigen};

/// Multivariate normal density `N(mean, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        check_finite(mean.iter().chain(cov.iter()), "gaussian parameters")?;
        if !is_symmetric(&cov, 1e-12) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let cov = linalg::symmetrize(&cov);
        if cov.nrows() > 0 {
            let eig = sym_eigen(&cov);
            let min = eig.eigenvalues.min();
            let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
            if min < -1e-12 * scale {
                return Err(Error::NotPsd { min_eigenvalue: min });
            }
        }
        Ok(GaussianDensity { mean, cov })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    pub fn standard(dim: usize) -> Self {
        GaussianDensity {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// `ln N(x; mean, cov)`. Eigenvalues are floored at `1e-14 * trace` so
    /// that nearly singular covariances still yield a finite value.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_finite(x.iter(), "log_pdf argument")?;
        let n = self.dim();
        let eig = sym_eigen(&self.cov);
        let floor = (linalg::SQRT_EIGEN_FLOOR * self.cov.trace()).max(f64::MIN_POSITIVE);
        let d = x - &self.mean;
        let proj = eig.eigenvectors.transpose() * d;
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for (l, p) in eig.eigenvalues.iter().zip(proj.iter()) {
            let l = l.max(floor);
            quad += p * p / l;
            log_det += l.ln();
        }
        Ok(-0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln())
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// Draws one sample `mean + cov^{1/2} z` for a standard normal `z`.
    pub fn sample_with(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), z.len())?;
        let root = linalg::matrix_sqrt(&self.cov)?;
        Ok(&self.mean + root * z)
    }

    /// Conditions the leading components on the trailing ones taking the
    /// value `y`.
    pub fn condition_on_tail(&self, y: &DVector<f64>) -> Result<GaussianDensity> {
        let n = self.dim();
        let k = y.len();
        if k == 0 || k >= n {
            return Err(Error::invalid("conditioning block must be a proper subset"));
        }
        let m = n - k;
        let sxx = self.cov.view((0, 0), (m, m)).into_owned();
        let sxy = self.cov.view((0, m), (m, k)).into_owned();
        let syy = self.cov.view((m, m), (k, k)).into_owned();
        if syy.diagonal().iter().any(|&v| v <= 0.0) {
            return Err(Error::Singular("conditioning block has nonpositive variance"));
        }
        let xbar = self.mean.rows(0, m).into_owned();
        let ybar = self.mean.rows(m, k).into_owned();
        let gain = linalg::spd_solve(&syy, &sxy.transpose())?.transpose();
        let mean = xbar + &gain * (y - ybar);
        let cov = linalg::symmetrize(&(sxx - &gain * sxy.transpose()));
        GaussianDensity::new(mean, cov)
    }
}

/// Conditional of the first component of a bivariate Gaussian given the
/// second component equals `y`.
pub fn gaussian_conditional(joint: &GaussianDensity, y: f64) -> Result<GaussianDensity> {
    check_dim(2, joint.dim())?;
    let syy = joint.cov()[(1, 1)];
    if syy <= 0.0 {
        return Err(Error::Singular("sigma_yy must be positive"));
    }
    let (xbar, ybar) = (joint.mean()[0], joint.mean()[1]);
    let sxx = joint.cov()[(0, 0)];
    let sxy = joint.cov()[(0, 1)];
    GaussianDensity::scalar(xbar + sxy / syy * (y - ybar), sxx - sxy * sxy / syy)
}

/// Finite mixture of Gaussians with simplex weights.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<GaussianDensity>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianDensity>) -> Result<Self> {
        check_dim(weights.len(), components.len())?;
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidWeights("negative or NaN mixture weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("mixture weights sum to {sum}")));
        }
        let dim = components[0].dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        Ok(GaussianMixture { weights, components })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianDensity] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let terms = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + c.log_pdf(x)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .fold(DVector::zeros(self.dim()), |acc, (w, c)| acc + c.mean() * *w)
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let n = self.dim();
        self.weights
            .iter()
            .zip(&self.components)
            .fold(DMatrix::zeros(n, n), |acc, (w, c)| {
                let d = c.mean() - &mean;
                acc + (c.cov() + &d * d.transpose()) * *w
            })
    }
}

/// Scale-mixture approximation of the Laplace density `(λ/2) e^{-λ|x|}`.
///
/// `variances` are the quadrature nodes of the exponential mixing density
/// over the component variance, with an implicit left end at zero; component
/// `j` is `N(0, variances[j])` with weight proportional to
/// `(λ²/2) e^{-λ² v_j / 2} (v_j - v_{j-1})`.
pub fn laplace_as_mixture(lambda: f64, variances: &[f64]) -> Result<GaussianMixture> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if variances.len() < 2 {
        return Err(Error::invalid("need at least two quadrature nodes"));
    }
    let mut prev = 0.0;
    let mut raw = Vec::with_capacity(variances.len());
    for &v in variances {
        if !(v > prev) || !v.is_finite() {
            return Err(Error::invalid("quadrature nodes must be positive and increasing"));
        }
        raw.push(0.5 * lambda * lambda * (-0.5 * lambda * lambda * v).exp() * (v - prev));
        prev = v;
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("mixture weights underflow"));
    }
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // absorb rounding so the simplex check holds exactly
    let drift = 1.0 - weights.iter().sum::<f64>();
    let imax = (0..weights.len())
        .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
        .unwrap_or(0);
    weights[imax] += drift;
    let components = variances
        .iter()
        .map(|&v| GaussianDensity::scalar(0.0, v))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(weights, components)
}
