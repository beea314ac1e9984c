//! Probability densities, weighted ensembles and grid densities.

mod ensemble;
mod gaussian;
mod grid;

pub use ensemble::{PointEstimate, WeightedEnsemble};
pub(crate) use ensemble::validate_weights;
pub use gaussian::{gaussian_conditional, laplace_as_mixture, GaussianDensity, GaussianMixture};
pub use grid::{GridDensity1D, GridDensity2D, DEFAULT_GRID_NODES, DEFAULT_GRID_STDS};
pub use grid::linspace;
pub(crate) use grid::{cumulative_trapezoid, interp, trapezoid};

/// Weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Neumaier-compensated running sums.
pub(crate) fn compensated_cumsum(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        out.push(sum + comp);
    }
    out
}
