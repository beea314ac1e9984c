use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;
use crate::prob::WeightedEnsemble;
use crate::rng::{standard_normal_vector, RngStream};

pub const LORENZ63_SIGMA: f64 = 10.0;
pub const LORENZ63_RHO: f64 = 28.0;
pub const LORENZ63_BETA: f64 = 8.0 / 3.0;

pub type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Vector field `f` of the model.
#[derive(Clone)]
pub enum Drift {
    /// `f(x) = A x + u`.
    Linear { a: DMatrix<f64>, u: DVector<f64> },
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Custom { dim: usize, f: Arc<DriftFn> },
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear { a, u } => f.debug_struct("Linear").field("a", a).field("u", u).finish(),
            Drift::Lorenz63 { sigma, rho, beta } => f
                .debug_struct("Lorenz63")
                .field("sigma", sigma)
                .field("rho", rho)
                .field("beta", beta)
                .finish(),
            Drift::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl Drift {
    pub fn lorenz63() -> Self {
        Drift::Lorenz63 {
            sigma: LORENZ63_SIGMA,
            rho: LORENZ63_RHO,
            beta: LORENZ63_BETA,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Drift::Linear { a, .. } => a.nrows(),
            Drift::Lorenz63 { .. } => 3,
            Drift::Custom { dim, .. } => *dim,
        }
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Drift::Linear { a, u } => a * x + u,
            Drift::Lorenz63 { sigma, rho, beta } => DVector::from_vec(vec![
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ]),
            Drift::Custom { f, .. } => f(x),
        }
    }
}

/// Stochastic difference equation
/// `x' = x + Δt f(x) + √(2Δt) Q^{1/2} z`, `z ~ N(0, I)`.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    drift: Drift,
    diffusion_cov: DMatrix<f64>,
    diffusion_root: DMatrix<f64>,
    dt: f64,
}

impl ModelSpec {
    pub fn new(drift: Drift, diffusion_cov: DMatrix<f64>, dt: f64) -> Result<Self> {
        let n = drift.dim();
        if n == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        if let Drift::Linear { a, u } = &drift {
            check_dim(n, a.ncols())?;
            check_dim(n, u.len())?;
        }
        check_dim(n, diffusion_cov.nrows())?;
        check_dim(n, diffusion_cov.ncols())?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("time step must be positive"));
        }
        let diffusion_root = linalg::matrix_sqrt(&diffusion_cov)?;
        Ok(ModelSpec {
            drift,
            diffusion_cov: linalg::symmetrize(&diffusion_cov),
            diffusion_root,
            dt,
        })
    }

    pub fn linear(a: DMatrix<f64>, u: DVector<f64>, q: DMatrix<f64>, dt: f64) -> Result<Self> {
        Self::new(Drift::Linear { a, u }, q, dt)
    }

    pub fn lorenz63(q: DMatrix<f64>, dt: f64) -> Result<Self> {
        Self::new(Drift::lorenz63(), q, dt)
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn drift_field(&self) -> &Drift {
        &self.drift
    }

    pub fn diffusion_cov(&self) -> &DMatrix<f64> {
        &self.diffusion_cov
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.drift, Drift::Linear { .. })
    }

    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        let fx = self.drift.eval_unchecked(x);
        check_dim(self.dim(), fx.len())?;
        check_finite(fx.iter(), "drift output")?;
        Ok(fx)
    }

    /// Deterministic part `x + Δt f(x)`.
    pub fn drift_step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x + self.drift(x)? * self.dt)
    }

    pub fn euler_maruyama_step(&self, x: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(x.iter(), "model state")?;
        check_dim(self.dim(), noise.len())?;
        Ok(self.drift_step(x)? + &self.diffusion_root * noise * (2.0 * self.dt).sqrt())
    }

    /// One-step transition covariance `2 Δt Q`.
    pub fn transition_cov(&self) -> DMatrix<f64> {
        &self.diffusion_cov * (2.0 * self.dt)
    }

    /// `ln π(to | from)`, a Gaussian with mean `from + Δt f(from)` and
    /// covariance `2 Δt Q`.
    pub fn transition_log_density(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), to.len())?;
        let cov = self.transition_cov();
        let chol = cov.clone().cholesky().ok_or(Error::NoTransitionDensity)?;
        let r = to - self.drift_step(from)?;
        let z = chol.l().solve_lower_triangular(&r).ok_or(Error::NoTransitionDensity)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * self.dim() as f64 * (2.0 * PI).ln())
    }

    /// Linear models only: `(F, c)` with `x' = F x + c + noise`.
    pub fn linear_transition(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match &self.drift {
            Drift::Linear { a, u } => {
                let n = self.dim();
                Some((DMatrix::identity(n, n) + a * self.dt, u * self.dt))
            }
            _ => None,
        }
    }

    /// Propagates every member with Euler-Maruyama. Member `i` draws its
    /// noise from `stream.substream(step, i)`, so the result does not depend
    /// on thread scheduling.
    pub fn propagate(&self, e: &WeightedEnsemble, stream: &RngStream, step: u64) -> Result<WeightedEnsemble> {
        check_dim(self.dim(), e.dim())?;
        let cols = (0..e.size())
            .into_par_iter()
            .map(|i| {
                let mut rng = stream.substream(step, i as u64);
                let z = standard_normal_vector(&mut rng, self.dim());
                self.euler_maruyama_step(&e.members().column(i).into_owned(), &z)
            })
            .collect::<Result<Vec<_>>>()?;
        e.with_members(DMatrix::from_columns(&cols))
    }

    /// Noise-free forecast of every member, `x + Δt f(x)`.
    pub fn propagate_deterministic(&self, e: &WeightedEnsemble) -> Result<WeightedEnsemble> {
        check_dim(self.dim(), e.dim())?;
        let cols = (0..e.size())
            .into_par_iter()
            .map(|i| self.drift_step(&e.members().column(i).into_owned()))
            .collect::<Result<Vec<_>>>()?;
        e.with_members(DMatrix::from_columns(&cols))
    }

    /// `f(x_i) + Q P⁺ (x_i − x̄)` for every member.
    fn inflated_field(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let e = WeightedEnsemble::uniform(members.clone())?;
        let p = e.cov()?;
        let cut = 1e-10 * p.trace();
        let gain = &self.diffusion_cov * linalg::pinv_sym_abs(&p, cut)?;
        let dev = e.deviations();
        let mut out = &gain * dev;
        for (i, mut col) in out.column_iter_mut().enumerate() {
            col += self.drift(&members.column(i).into_owned())?;
        }
        Ok(out)
    }

    /// One Heun step of `dx_i/dt = f(x_i) + Q P⁻¹ (x_i − x̄)` with the
    /// empirical moments re-evaluated at each stage.
    pub fn deterministic_ensemble_step(&self, e: &WeightedEnsemble) -> Result<WeightedEnsemble> {
        check_dim(self.dim(), e.dim())?;
        if !e.is_uniform() {
            return Err(Error::invalid("deterministic ensemble step needs uniform weights"));
        }
        let x = e.members();
        let k1 = self.inflated_field(x)?;
        let predictor = x + &k1 * self.dt;
        let k2 = self.inflated_field(&predictor)?;
        let next = x + (k1 + k2) * (0.5 * self.dt);
        check_finite(next.iter(), "ensemble state")?;
        WeightedEnsemble::uniform(next)
    }
}
