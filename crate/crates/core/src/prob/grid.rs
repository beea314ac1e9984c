//! Densities tabulated on one- and two-dimensional grids.

use nalgebra::DMatrix;

use super::compensated_cumsum;
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_GRID_NODES: usize = 1024;
/// Half-width of the default support in standard deviations.
pub const DEFAULT_GRID_STDS: f64 = 6.0;

/// Piecewise-linear density on strictly increasing nodes, normalised so its
/// trapezoid integral is one.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity1D {
    nodes: Vec<f64>,
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridDensity1D {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_dim(nodes.len(), values.len())?;
        if nodes.len() < 2 {
            return Err(Error::invalid("grid density needs at least two nodes"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid nodes must be strictly increasing"));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("grid density values must be finite and nonnegative"));
        }
        let cells: Vec<f64> = nodes
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, v)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
            .collect();
        let cum = compensated_cumsum(&cells);
        let total = *cum.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::invalid("grid density has zero mass"));
        }
        let values = values.iter().map(|v| v / total).collect();
        let mut cdf = Vec::with_capacity(nodes.len());
        cdf.push(0.0);
        cdf.extend(cum.iter().map(|c| (c / total).min(1.0)));
        *cdf.last_mut().unwrap() = 1.0;
        Ok(GridDensity1D { nodes, values, cdf })
    }

    /// Tabulates `f` on `n` equispaced nodes of `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::invalid("need hi > lo and at least two nodes"));
        }
        let nodes = linspace(lo, hi, n);
        let values = nodes.iter().map(|&x| f(x)).collect();
        Self::new(nodes, values)
    }

    /// `N(mean, variance)` on `mean ± 6 std` with the default node count.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::gaussian_on(mean, variance, DEFAULT_GRID_STDS, DEFAULT_GRID_NODES)
    }

    pub fn gaussian_on(mean: f64, variance: f64, stds: f64, n: usize) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::invalid("variance must be positive"));
        }
        let s = variance.sqrt();
        Self::from_fn(mean - stds * s, mean + stds * s, n, |x| {
            (-0.5 * (x - mean).powi(2) / variance).exp()
        })
    }

    /// Gaussian fitted to the sample moments.
    pub fn fit_gaussian(samples: &[f64]) -> Result<Self> {
        let (mean, var) = sample_moments(samples)?;
        Self::gaussian(mean, var)
    }

    /// Gaussian kernel density estimate. `bandwidth = None` selects
    /// Silverman's rule `1.06 σ M^{-1/5}`.
    pub fn kernel_estimate(samples: &[f64], bandwidth: Option<f64>) -> Result<Self> {
        let (mean, var) = sample_moments(samples)?;
        let sd = var.sqrt();
        let h = bandwidth.unwrap_or(1.06 * sd * (samples.len() as f64).powf(-0.2));
        if !(h > 0.0) {
            return Err(Error::invalid("kernel bandwidth must be positive"));
        }
        let (smin, smax) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let lo = (mean - DEFAULT_GRID_STDS * sd).min(smin - 5.0 * h);
        let hi = (mean + DEFAULT_GRID_STDS * sd).max(smax + 5.0 * h);
        let inv = 1.0 / (h * h);
        Self::from_fn(lo, hi, DEFAULT_GRID_NODES, |x| {
            samples.iter().map(|&s| (-0.5 * (x - s).powi(2) * inv).exp()).sum()
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cumulative trapezoid integral at the nodes (starts at 0, ends at 1).
    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.nodes[0]
    }

    pub fn upper(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.nodes, &self.values)
    }

    pub fn pdf_at(&self, x: f64) -> f64 {
        if x < self.lower() || x > self.upper() {
            return 0.0;
        }
        interp(&self.nodes, &self.values, x)
    }

    /// CDF by linear interpolation of the cumulative trapezoid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x <= self.lower() {
            0.0
        } else if x >= self.upper() {
            1.0
        } else {
            interp(&self.nodes, &self.cdf, x)
        }
    }

    /// Generalised inverse CDF; flat stretches resolve to their leftmost node.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let k = self.cdf.partition_point(|&c| c < p);
        if k == 0 {
            return self.nodes[0];
        }
        if k >= self.nodes.len() {
            return self.upper();
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let (x0, x1) = (self.nodes[k - 1], self.nodes[k]);
        x0 + (p - c0) / (c1 - c0) * (x1 - x0)
    }

    pub fn mean(&self) -> f64 {
        let xv: Vec<f64> = self.nodes.iter().zip(&self.values).map(|(x, v)| x * v).collect();
        trapezoid(&self.nodes, &xv)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xv: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(x, v)| (x - m).powi(2) * v)
            .collect();
        trapezoid(&self.nodes, &xv)
    }

    /// True when the density is strictly positive at every interior node.
    pub fn positive_interior(&self) -> bool {
        self.values[1..self.values.len() - 1].iter().all(|&v| v > 0.0)
    }
}

/// Density on a tensor grid; `values[(i, j)]` is the density at
/// `(x1[i], x2[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity2D {
    x1: Vec<f64>,
    x2: Vec<f64>,
    values: DMatrix<f64>,
}

impl GridDensity2D {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        check_dim(x1.len(), values.nrows())?;
        check_dim(x2.len(), values.ncols())?;
        for axis in [&x1, &x2] {
            if axis.len() < 2 || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::invalid("grid axes must be strictly increasing"));
            }
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("grid density values must be finite and nonnegative"));
        }
        let rows: Vec<f64> = (0..x1.len())
            .map(|i| trapezoid(&x2, values.row(i).iter().copied().collect::<Vec<_>>().as_slice()))
            .collect();
        let total = trapezoid(&x1, &rows);
        if !(total > 0.0) {
            return Err(Error::invalid("grid density has zero mass"));
        }
        Ok(GridDensity2D {
            x1,
            x2,
            values: values / total,
        })
    }

    pub fn from_fn(
        x1: Vec<f64>,
        x2: Vec<f64>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let values = DMatrix::from_fn(x1.len(), x2.len(), |i, j| f(x1[i], x2[j]));
        Self::new(x1, x2, values)
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn transpose(&self) -> GridDensity2D {
        GridDensity2D {
            x1: self.x2.clone(),
            x2: self.x1.clone(),
            values: self.values.transpose(),
        }
    }

    pub fn marginal_x1(&self) -> Result<GridDensity1D> {
        let rows: Vec<f64> = (0..self.x1.len()).map(|i| self.row_mass(i)).collect();
        GridDensity1D::new(self.x1.clone(), rows)
    }

    fn row_mass(&self, i: usize) -> f64 {
        let row: Vec<f64> = self.values.row(i).iter().copied().collect();
        trapezoid(&self.x2, &row)
    }

    /// Conditional density of `x2` given `x1`, linearly interpolated between
    /// the neighbouring grid rows.
    pub fn conditional_x2(&self, x1: f64) -> Result<GridDensity1D> {
        let n = self.x1.len();
        let x1 = x1.clamp(self.x1[0], self.x1[n - 1]);
        let k = self.x1.partition_point(|&x| x <= x1).clamp(1, n - 1);
        let t = (x1 - self.x1[k - 1]) / (self.x1[k] - self.x1[k - 1]);
        let row: Vec<f64> = (0..self.x2.len())
            .map(|j| (1.0 - t) * self.values[(k - 1, j)] + t * self.values[(k, j)])
            .collect();
        GridDensity1D::new(self.x2.clone(), row)
            .map_err(|_| Error::invalid(format!("degenerate conditional at x1 = {x1}")))
    }
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    v[n - 1] = hi;
    v
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    let cells: Vec<f64> = x
        .windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .collect();
    compensated_cumsum(&cells).last().copied().unwrap_or(0.0)
}

/// Running trapezoid integral, starting at zero on the first node.
pub(crate) fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut cells = vec![0.0];
    cells.extend(x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0])));
    compensated_cumsum(&cells)
}

/// Linear interpolation on sorted `x`, clamped at the ends.
pub(crate) fn interp(x: &[f64], y: &[f64], at: f64) -> f64 {
    let n = x.len();
    if at <= x[0] {
        return y[0];
    }
    if at >= x[n - 1] {
        return y[n - 1];
    }
    let k = x.partition_point(|&v| v <= at).clamp(1, n - 1);
    let t = (at - x[k - 1]) / (x[k] - x[k - 1]);
    y[k - 1] + t * (y[k] - y[k - 1])
}

fn sample_moments(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::DegenerateEnsemble("need at least two samples".into()));
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateEnsemble("samples have zero spread".into()));
    }
    Ok((mean, var))
}
