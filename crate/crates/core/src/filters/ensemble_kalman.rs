//! Ensemble Kalman analysis steps: perturbed observations, square-root
//! transforms and the ensemble transform Kalman-Bucy flow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{self, inv_sqrt, pinv_sqrt, spd_solve, symmetrize, PINV_REL_TOL};
use crate::prob::{log_sum_exp, WeightedEnsemble};
use crate::rng::standard_normal_vector;

/// Right-multiplying `M × M` transform of the deviation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformMatrix {
    entries: DMatrix<f64>,
}

impl TransformMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::invalid("transform matrix must be square"));
        }
        check_finite(entries.iter(), "transform matrix")?;
        Ok(TransformMatrix { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// `max_i |(T 1)_i − 1|`; zero when the ensemble mean is preserved.
    pub fn mean_preservation_error(&self) -> f64 {
        let ones = DVector::from_element(self.size(), 1.0);
        (&self.entries * &ones - ones).amax()
    }

    pub fn apply(&self, deviations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.size(), deviations.ncols())?;
        Ok(deviations * &self.entries)
    }
}

/// Which square-root transform an ensemble square-root step uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SquareRootTransform {
    /// Symmetric `S`.
    #[default]
    Symmetric,
    /// `S_OT`, maximising the correlation between prior and posterior members.
    Optimal,
}

fn require_uniform(e: &WeightedEnsemble) -> Result<()> {
    if !e.is_uniform() {
        return Err(Error::invalid("ensemble Kalman steps need uniform weights"));
    }
    if e.size() < 2 {
        return Err(Error::DegenerateEnsemble("need at least two members".into()));
    }
    Ok(())
}

fn check_linear_obs(e: &WeightedEnsemble, h: &DMatrix<f64>, r: &DMatrix<f64>, y0: &DVector<f64>) -> Result<()> {
    check_dim(e.dim(), h.ncols())?;
    check_dim(h.nrows(), r.nrows())?;
    check_dim(h.nrows(), r.ncols())?;
    check_dim(h.nrows(), y0.len())
}

/// Ensemble-space pieces shared by the analysis steps.
struct EnsembleMoments {
    mean: DVector<f64>,
    dx: DMatrix<f64>,
    dy: DMatrix<f64>,
    scale: f64,
}

impl EnsembleMoments {
    fn new(e: &WeightedEnsemble, h: &DMatrix<f64>) -> Self {
        let dx = e.deviations();
        let dy = h * &dx;
        EnsembleMoments {
            mean: e.mean(),
            dx,
            dy,
            scale: 1.0 / (e.size() - 1) as f64,
        }
    }

    /// `K = P Hᵀ (H P Hᵀ + R)⁻¹` from the empirical covariance, never forming `P`.
    fn gain(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let pht = &self.dx * self.dy.transpose() * self.scale;
        let innovation = symmetrize(&(&self.dy * self.dy.transpose() * self.scale + r));
        let gain_t = spd_solve(&innovation, &pht.transpose()).map_err(|_| Error::Singular("innovation covariance"))?;
        Ok(gain_t.transpose())
    }
}

/// EnKF with perturbed observations:
/// `x_i ← x_i − K (H x_i − y₀ + ξ_i)`, `ξ_i ~ N(0, R)`.
pub fn enkf_perturbed_step<R: Rng + ?Sized>(
    e: &WeightedEnsemble,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    require_uniform(e)?;
    check_linear_obs(e, h, r, y0)?;
    let gain = EnsembleMoments::new(e, h).gain(r)?;
    let root = linalg::matrix_sqrt(r)?;
    let mut innov = h * e.members();
    for mut col in innov.column_iter_mut() {
        let xi = &root * standard_normal_vector(rng, y0.len());
        col -= y0;
        col += xi;
    }
    let next = e.members() - gain * innov;
    check_finite(next.iter(), "EnKF analysis")?;
    WeightedEnsemble::uniform(next)
}

/// `S = {I + (M−1)⁻¹ δYᵀ R⁻¹ δY}^{−1/2}`, `δY = H δX`.
pub fn esrf_transform(e: &WeightedEnsemble, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<TransformMatrix> {
    require_uniform(e)?;
    check_dim(e.dim(), h.ncols())?;
    check_dim(h.nrows(), r.nrows())?;
    let mo = EnsembleMoments::new(e, h);
    symmetric_transform(&mo, r)
}

fn symmetric_transform(mo: &EnsembleMoments, r: &DMatrix<f64>) -> Result<TransformMatrix> {
    let m = mo.dx.ncols();
    let rinv_dy = spd_solve(r, &mo.dy).map_err(|_| Error::Singular("observation noise covariance"))?;
    let c = symmetrize(&(DMatrix::identity(m, m) + mo.dy.transpose() * rinv_dy * mo.scale));
    TransformMatrix::new(inv_sqrt(&c)?)
}

/// `S_OT = (M−1)^{−1/2} S [S δXᵀ P δX S]^{+1/2} S δXᵀ δX`, plus the
/// projector onto the ones vector so that `S_OT 1 = 1`.
pub fn esrf_optimal_transform(e: &WeightedEnsemble, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<TransformMatrix> {
    let s = esrf_transform(e, h, r)?;
    let dx = e.deviations();
    Ok(optimal_from_symmetric(&dx, &s))
}

fn optimal_from_symmetric(dx: &DMatrix<f64>, s: &TransformMatrix) -> TransformMatrix {
    let m = dx.ncols();
    let s = s.entries();
    let gram = dx.transpose() * dx;
    // δXᵀ P δX = δXᵀ δX δXᵀ δX / (M−1)
    let inner = symmetrize(&(s * &gram * &gram * s / (m - 1) as f64));
    let root = pinv_sqrt(&inner, PINV_REL_TOL).expect("square input");
    let t = s * root * s * gram / ((m - 1) as f64).sqrt();
    let ones = DMatrix::from_element(m, m, 1.0 / m as f64);
    TransformMatrix { entries: t + ones }
}

/// Ensemble square-root analysis `x_i ← x̄ᵃ + δX T e_i`.
///
/// `x̄ᵃ` is the Kalman update of the empirical mean, or the
/// importance-weighted mean when `bias_correction` is set.
pub fn square_root_step(
    e: &WeightedEnsemble,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    transform: SquareRootTransform,
    bias_correction: bool,
) -> Result<WeightedEnsemble> {
    require_uniform(e)?;
    check_linear_obs(e, h, r, y0)?;
    let mo = EnsembleMoments::new(e, h);
    let s = symmetric_transform(&mo, r)?;
    let t = match transform {
        SquareRootTransform::Symmetric => s,
        SquareRootTransform::Optimal => optimal_from_symmetric(&mo.dx, &s),
    };
    let mean_a = if bias_correction {
        importance_weighted_mean(e, h, r, y0)?
    } else {
        &mo.mean - mo.gain(r)? * (h * &mo.mean - y0)
    };
    let mut next = t.apply(&mo.dx)?;
    for mut col in next.column_iter_mut() {
        col += &mean_a;
    }
    check_finite(next.iter(), "square-root analysis")?;
    WeightedEnsemble::uniform(next)
}

pub fn esrf_step(e: &WeightedEnsemble, h: &DMatrix<f64>, r: &DMatrix<f64>, y0: &DVector<f64>) -> Result<WeightedEnsemble> {
    square_root_step(e, h, r, y0, SquareRootTransform::Symmetric, false)
}

fn importance_weighted_mean(
    e: &WeightedEnsemble,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut resid = h * e.members();
    for mut col in resid.column_iter_mut() {
        col -= y0;
    }
    let rinv = spd_solve(r, &resid)?;
    let logw: Vec<f64> = (0..e.size())
        .map(|i| -0.5 * resid.column(i).dot(&rinv.column(i)))
        .collect();
    let lse = log_sum_exp(&logw);
    if !lse.is_finite() {
        return Err(Error::WeightCollapse);
    }
    let w = DVector::from_iterator(logw.len(), logw.iter().map(|l| (l - lse).exp()));
    Ok(e.members() * w)
}

/// Integrator for flows in the artificial time `s ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FlowIntegrator {
    Euler,
    #[default]
    Heun,
}

impl FlowIntegrator {
    /// Advances `x` by one step of size `ds` for the field `f`.
    pub(crate) fn step<F>(self, x: &DMatrix<f64>, ds: f64, mut f: F) -> Result<DMatrix<f64>>
    where
        F: FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    {
        let k1 = f(x)?;
        match self {
            FlowIntegrator::Euler => Ok(x + k1 * ds),
            FlowIntegrator::Heun => {
                let predictor = x + &k1 * ds;
                let k2 = f(&predictor)?;
                Ok(x + (k1 + k2) * (0.5 * ds))
            }
        }
    }
}

/// `−½ P Hᵀ R⁻¹ (H x_i + H x̄ − 2 y₀)` for every member.
fn etkb_field(x: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>, y0: &DVector<f64>) -> Result<DMatrix<f64>> {
    let e = WeightedEnsemble::uniform(x.clone())?;
    let mo = EnsembleMoments::new(&e, h);
    let hx = h * x;
    let hmean = h * &mo.mean;
    let mut innov = hx;
    for mut col in innov.column_iter_mut() {
        col += &hmean;
        col -= y0 * 2.0;
    }
    let rinv_innov = spd_solve(r, &innov).map_err(|_| Error::Singular("observation noise covariance"))?;
    // P Hᵀ = δX δYᵀ / (M−1)
    Ok(&mo.dx * (mo.dy.transpose() * rinv_innov) * (-0.5 * mo.scale))
}

/// Ensemble transform Kalman-Bucy filter with the default integrator.
pub fn etkb_filter_step(
    e: &WeightedEnsemble,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    n_substeps: usize,
) -> Result<WeightedEnsemble> {
    etkb_filter_step_with(e, h, r, y0, n_substeps, FlowIntegrator::default())
}

pub fn etkb_filter_step_with(
    e: &WeightedEnsemble,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    n_substeps: usize,
    integrator: FlowIntegrator,
) -> Result<WeightedEnsemble> {
    Ok(etkb_filter_path(e, h, r, y0, n_substeps, integrator)?.pop().expect("non-empty path"))
}

/// Ensembles at `s = 0, 1/n, …, 1` along the Kalman-Bucy flow.
pub fn etkb_filter_path(
    e: &WeightedEnsemble,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    n_substeps: usize,
    integrator: FlowIntegrator,
) -> Result<Vec<WeightedEnsemble>> {
    require_uniform(e)?;
    check_linear_obs(e, h, r, y0)?;
    if n_substeps == 0 {
        return Err(Error::invalid("n_substeps must be at least 1"));
    }
    let ds = 1.0 / n_substeps as f64;
    let mut path = Vec::with_capacity(n_substeps + 1);
    path.push(e.clone());
    let mut x = e.members().clone();
    for _ in 0..n_substeps {
        x = integrator.step(&x, ds, |x| etkb_field(x, h, r, y0))?;
        check_finite(x.iter(), "Kalman-Bucy flow")?;
        path.push(WeightedEnsemble::uniform(x.clone())?);
    }
    Ok(path)
}
