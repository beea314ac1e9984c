//! Metropolis-adjusted Langevin and Hamiltonian Monte Carlo.
//!
//! Potential `U = −ln π`; the momentum kick uses `−∇U`, the gradient of the
//! log density. Step size `eps` plays the role of `√(2Δt)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::filters::kalman_update;
use crate::linalg::{spd_inverse, spd_solve};
use crate::prob::GaussianDensity;
use crate::rng::standard_normal_vector;

/// Step size used by the CLI when none is given.
pub const DEFAULT_STEP_SIZE: f64 = 0.25;

pub type LogDensityFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Unnormalised target `π ∝ exp(−U)`.
#[derive(Clone)]
pub struct TargetDensity {
    dim: usize,
    log_density: Arc<LogDensityFn>,
    gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl TargetDensity {
    /// Target with a finite-difference gradient.
    pub fn new(dim: usize, log_density: Arc<LogDensityFn>) -> Self {
        TargetDensity {
            dim,
            log_density,
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, gradient: Arc<GradientFn>) -> Self {
        self.gradient = Some(gradient);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        (self.log_density)(x)
    }

    /// `∇ ln π = −∇U`; central differences with step `1e-6 (1 + |x_k|)`
    /// when no analytic gradient was supplied.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => self.finite_difference_gradient(x),
        }
    }

    pub fn finite_difference_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut probe = x.clone();
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            probe[k] = x[k] + h;
            let up = self.log_density(&probe);
            probe[k] = x[k] - h;
            let down = self.log_density(&probe);
            probe[k] = x[k];
            g[k] = (up - down) / (2.0 * h);
        }
        g
    }

    /// Gaussian target with analytic gradient `−Σ⁻¹ (x − m)`.
    pub fn gaussian(density: &GaussianDensity) -> Result<Self> {
        let prec = spd_inverse(density.cov())?;
        let mean = density.mean().clone();
        let (p2, m2) = (prec.clone(), mean.clone());
        Ok(TargetDensity::new(
            mean.len(),
            Arc::new(move |x| {
                let d = x - &mean;
                -0.5 * d.dot(&(&prec * &d))
            }),
        )
        .with_gradient(Arc::new(move |x| -(&p2 * (x - &m2)))))
    }

    /// Posterior of a Gaussian prior under `y₀ = H x + N(0, R)`.
    pub fn bayes_linear(problem: &BayesLinearProblem) -> Result<Self> {
        let prior_prec = spd_inverse(problem.prior.cov())?;
        let rinv = spd_inverse(&problem.r)?;
        let m = problem.prior.mean().clone();
        let h = problem.h.clone();
        let y = problem.y0.clone();
        let (pp2, ri2, m2, h2, y2) = (prior_prec.clone(), rinv.clone(), m.clone(), h.clone(), y.clone());
        Ok(TargetDensity::new(
            m.len(),
            Arc::new(move |x| {
                let d = x - &m;
                let r = &y - &h * x;
                -0.5 * d.dot(&(&prior_prec * &d)) - 0.5 * r.dot(&(&rinv * &r))
            }),
        )
        .with_gradient(Arc::new(move |x| {
            -(&pp2 * (x - &m2)) + h2.transpose() * (&ri2 * (&y2 - &h2 * x))
        })))
    }

    /// Built-in targets by name: `"gaussian"` (standard normal in 2D) and
    /// `"bayes-linear"` ([`BayesLinearProblem::standard`]).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Self::gaussian(&GaussianDensity::standard(2)),
            "bayes-linear" => Self::bayes_linear(&BayesLinearProblem::standard()),
            other => Err(Error::config(format!("unknown target '{other}'"))),
        }
    }
}

/// Gaussian prior, linear observation and one data value.
#[derive(Clone, Debug)]
pub struct BayesLinearProblem {
    pub prior: GaussianDensity,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub y0: DVector<f64>,
}

impl BayesLinearProblem {
    /// A fixed 2D instance with a correlated prior and one scalar datum.
    pub fn standard() -> Self {
        BayesLinearProblem {
            prior: GaussianDensity::new(
                DVector::from_vec(vec![0.0, 1.0]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            )
            .expect("valid prior"),
            h: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            r: DMatrix::from_element(1, 1, 0.5),
            y0: DVector::from_element(1, 2.5),
        }
    }

    /// Exact posterior.
    pub fn posterior(&self) -> Result<GaussianDensity> {
        kalman_update(&self.prior, &self.h, &self.r, &self.y0)
    }

    /// Gradient of the log posterior, via a solve with `R`; used for checks.
    pub fn log_posterior_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let prior = spd_solve(self.prior.cov(), &DMatrix::from_column_slice(x.len(), 1, (x - self.prior.mean()).as_slice()))?;
        let resid = &self.y0 - &self.h * x;
        let lik = spd_solve(&self.r, &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()))?;
        Ok(self.h.transpose() * lik.column(0) - prior.column(0))
    }
}

/// Half kick, drift, half kick; the second kick uses the new position.
pub fn leapfrog_step(
    t: &TargetDensity,
    x: &DVector<f64>,
    p: &DVector<f64>,
    eps: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(t.dim(), x.len())?;
    check_dim(t.dim(), p.len())?;
    let g0 = t.gradient(x);
    if g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target gradient"));
    }
    let half = p + g0 * (0.5 * eps);
    let xn = x + &half * eps;
    let g1 = t.gradient(&xn);
    if g1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target gradient"));
    }
    let pn = half + g1 * (0.5 * eps);
    Ok((xn, pn))
}

/// `E = ½ pᵀp + U(x)`.
pub fn hamiltonian(t: &TargetDensity, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
    0.5 * p.norm_squared() - t.log_density(x)
}

/// Raw chain output: column `k` is the state after proposal `k + 1`.
#[derive(Clone, Debug)]
pub struct ChainResult {
    pub samples: DMatrix<f64>,
    pub acceptance_rate: f64,
    /// Momentum drawn at the start of each proposal.
    pub initial_momenta: DMatrix<f64>,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Samples after discarding the first `burn_in` states.
    pub fn after_burn_in(&self, burn_in: usize) -> DMatrix<f64> {
        let start = burn_in.min(self.len());
        self.samples.columns(start, self.len() - start).into_owned()
    }

    /// Samples after the default burn-in of `n / 10`.
    pub fn default_samples(&self) -> DMatrix<f64> {
        self.after_burn_in(self.len() / 10)
    }
}

/// HMC with `l` leapfrog steps per proposal and a fresh `N(0, I)` momentum
/// each time; accepted with probability `min{1, exp(−(E' − E))}`.
pub fn hmc_chain<R: Rng + ?Sized>(
    t: &TargetDensity,
    x0: &DVector<f64>,
    eps: f64,
    l: usize,
    n: usize,
    rng: &mut R,
) -> Result<ChainResult> {
    check_dim(t.dim(), x0.len())?;
    if l == 0 || n == 0 {
        return Err(Error::invalid("need at least one leapfrog step and one sample"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("step size must be positive"));
    }
    let d = t.dim();
    let mut samples = DMatrix::zeros(d, n);
    let mut momenta = DMatrix::zeros(d, n);
    let mut x = x0.clone();
    let mut accepted = 0usize;
    for k in 0..n {
        let p0 = standard_normal_vector(rng, d);
        let e0 = hamiltonian(t, &x, &p0);
        let (mut xn, mut pn) = (x.clone(), p0.clone());
        for _ in 0..l {
            (xn, pn) = leapfrog_step(t, &xn, &pn, eps)?;
        }
        let e1 = hamiltonian(t, &xn, &pn);
        let u: f64 = rng.gen();
        if e1.is_finite() && u < (e0 - e1).exp() {
            x = xn;
            accepted += 1;
        }
        samples.set_column(k, &x);
        momenta.set_column(k, &p0);
    }
    Ok(ChainResult {
        samples,
        acceptance_rate: accepted as f64 / n as f64,
        initial_momenta: momenta,
    })
}

/// MALA: one leapfrog step per proposal.
pub fn mala_chain<R: Rng + ?Sized>(
    t: &TargetDensity,
    x0: &DVector<f64>,
    eps: f64,
    n: usize,
    rng: &mut R,
) -> Result<ChainResult> {
    hmc_chain(t, x0, eps, 1, n, rng)
}

/// Integrated autocorrelation time with Sokal's adaptive window (c = 5).
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n {
        let c: f64 = (0..n - lag)
            .map(|i| (series[i] - mean) * (series[i + lag] - mean))
            .sum::<f64>()
            / (n as f64 * var);
        tau += 2.0 * c;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Monte Carlo standard error of the mean, inflated by the autocorrelation time.
pub fn chain_standard_error(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var * integrated_autocorrelation_time(series) / n).sqrt()
}
