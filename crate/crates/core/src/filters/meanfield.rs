//! Continuous-time transforms driven by one-dimensional densities: the
//! mean-field observation flow and the Moser interpolation velocity.

use nalgebra::{DMatrix, DVector};

use super::FlowIntegrator;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::models::ObservationModel;
use crate::prob::{cumulative_trapezoid, interp, trapezoid, GridDensity1D, WeightedEnsemble};

/// Spread below which the mean-field flow does nothing.
const MIN_OBS_VARIANCE: f64 = 1e-14;

/// How the mean-field filter estimates the density of the predicted observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DensityModel {
    #[default]
    Gaussian,
    /// Gaussian kernel density with Silverman's bandwidth.
    Kernel,
}

/// A velocity tabulated on grid nodes, linearly interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField1D {
    nodes: Vec<f64>,
    values: Vec<f64>,
    flux_residual: f64,
}

impl VelocityField1D {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, y: f64) -> f64 {
        interp(&self.nodes, &self.values, y)
    }

    /// Value of the cumulative source integral at the upper grid end; zero
    /// for an exactly balanced source.
    pub fn flux_residual(&self) -> f64 {
        self.flux_residual
    }
}

/// Velocity `v = c / π` from the cumulative integral `c` of a zero-mean source.
fn velocity_from_source(nodes: &[f64], density: &[f64], source: &[f64], sign: f64) -> VelocityField1D {
    let cum = cumulative_trapezoid(nodes, source);
    let peak = density.iter().cloned().fold(0.0_f64, f64::max);
    let values = cum
        .iter()
        .zip(density)
        .map(|(c, p)| if *p > 1e-300 && *p > 1e-14 * peak { sign * c / p } else { 0.0 })
        .collect();
    VelocityField1D {
        nodes: nodes.to_vec(),
        values,
        flux_residual: *cum.last().unwrap_or(&0.0),
    }
}

/// `f_y(y) = π_Y(y)⁻¹ ∫_{−∞}^{y} π_Y (L − L̄)`, `L(y) = (y − y₀)² / (2R)`.
pub fn meanfield_y_velocity(pi_y: &GridDensity1D, r: f64, y0: f64) -> Result<VelocityField1D> {
    if !(r > 0.0) {
        return Err(Error::invalid("observation variance must be positive"));
    }
    if !pi_y.positive_interior() {
        return Err(Error::invalid("density must be positive on the grid interior"));
    }
    let x = pi_y.nodes();
    let p = pi_y.values();
    let loss: Vec<f64> = x.iter().map(|y| (y - y0).powi(2) / (2.0 * r)).collect();
    let weighted: Vec<f64> = p.iter().zip(&loss).map(|(p, l)| p * l).collect();
    let mean_loss = trapezoid(x, &weighted) / trapezoid(x, p);
    let source: Vec<f64> = p.iter().zip(&loss).map(|(p, l)| p * (l - mean_loss)).collect();
    Ok(velocity_from_source(x, p, &source, 1.0))
}

/// `g(y, s) = −π_s(y)⁻¹ ∫_{−∞}^{y} (π_post − π_prior)` with
/// `π_s = (1 − s) π_prior + s π_post`, on the prior's grid.
pub fn moser_velocity_1d(prior: &GridDensity1D, posterior: &GridDensity1D, s: f64) -> Result<VelocityField1D> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid("interpolation time must lie in [0, 1]"));
    }
    let x = prior.nodes();
    let p0 = prior.values();
    let p1: Vec<f64> = if posterior.nodes() == x {
        posterior.values().to_vec()
    } else {
        x.iter().map(|&y| posterior.pdf_at(y)).collect()
    };
    let ps: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| (1.0 - s) * a + s * b).collect();
    let n = ps.len();
    if ps[1..n - 1].iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("interpolated density must be positive on the grid interior"));
    }
    let diff: Vec<f64> = p1.iter().zip(p0).map(|(b, a)| b - a).collect();
    Ok(velocity_from_source(x, &ps, &diff, -1.0))
}

/// Mean-field transform filter with the Heun integrator.
pub fn meanfield_transform_step(
    e: &WeightedEnsemble,
    o: &ObservationModel,
    y0: &DVector<f64>,
    n_substeps: usize,
    density: DensityModel,
) -> Result<WeightedEnsemble> {
    meanfield_transform_step_with(e, o, y0, n_substeps, density, FlowIntegrator::default())
}

/// Mean-field transform filter.
///
/// Each predicted observation `y_i = h(x_i)` moves with `f_y`, and each
/// state component follows through the Gaussian regression
/// `f_{x^k} = σ_{x^k y} σ_yy⁻² f_y(y_i)`. Vector observations with diagonal
/// `R` are assimilated one component at a time.
pub fn meanfield_transform_step_with(
    e: &WeightedEnsemble,
    o: &ObservationModel,
    y0: &DVector<f64>,
    n_substeps: usize,
    density: DensityModel,
    integrator: FlowIntegrator,
) -> Result<WeightedEnsemble> {
    if !e.is_uniform() {
        return Err(Error::invalid("mean-field transform needs uniform weights"));
    }
    if e.size() < 2 {
        return Err(Error::DegenerateEnsemble("need at least two members".into()));
    }
    check_dim(o.state_dim(), e.dim())?;
    check_dim(o.obs_dim(), y0.len())?;
    if n_substeps == 0 {
        return Err(Error::invalid("n_substeps must be at least 1"));
    }
    let r = o.noise_cov();
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            if i != j && r[(i, j)] != 0.0 {
                return Err(Error::invalid("mean-field filter needs a diagonal observation covariance"));
            }
        }
    }
    let ds = 1.0 / n_substeps as f64;
    let mut x = e.members().clone();
    for k in 0..o.obs_dim() {
        let rk = r[(k, k)];
        for _ in 0..n_substeps {
            x = integrator.step(&x, ds, |x| meanfield_field(x, o, k, rk, y0[k], density))?;
            check_finite(x.iter(), "mean-field flow")?;
        }
    }
    WeightedEnsemble::uniform(x)
}

fn meanfield_field(
    x: &DMatrix<f64>,
    o: &ObservationModel,
    k: usize,
    r: f64,
    y0: f64,
    density: DensityModel,
) -> Result<DMatrix<f64>> {
    let m = x.ncols();
    let scale = 1.0 / (m - 1) as f64;
    let y: Vec<f64> = o.apply_columns(x)?.row(k).iter().copied().collect();
    let ybar = y.iter().sum::<f64>() / m as f64;
    let dy = DVector::from_iterator(m, y.iter().map(|v| v - ybar));
    let var_y = dy.norm_squared() * scale;
    if var_y < MIN_OBS_VARIANCE {
        return Ok(DMatrix::zeros(x.nrows(), m));
    }
    let fy: Vec<f64> = match density {
        DensityModel::Gaussian => y.iter().map(|yi| -0.5 * var_y / r * (yi + ybar - 2.0 * y0)).collect(),
        DensityModel::Kernel => {
            let pi = GridDensity1D::kernel_estimate(&y, None)?;
            let v = meanfield_y_velocity(&pi, r, y0)?;
            y.iter().map(|&yi| v.at(yi)).collect()
        }
    };
    let xbar = x.column_sum() / m as f64;
    let mut dx = x.clone();
    for mut col in dx.column_iter_mut() {
        col -= &xbar;
    }
    let regression = &dx * &dy * (scale / var_y);
    let fy = DVector::from_vec(fy);
    Ok(regression * fy.transpose())
}
