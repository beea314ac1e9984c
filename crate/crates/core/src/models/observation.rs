use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;

pub type ObservationFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

#[derive(Clone)]
pub enum ObservationOperator {
    Linear(DMatrix<f64>),
    Nonlinear {
        state_dim: usize,
        obs_dim: usize,
        h: Arc<ObservationFn>,
    },
}

impl fmt::Debug for ObservationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationOperator::Linear(h) => f.debug_tuple("Linear").field(h).finish(),
            ObservationOperator::Nonlinear {
                state_dim, obs_dim, ..
            } => f
                .debug_struct("Nonlinear")
                .field("state_dim", state_dim)
                .field("obs_dim", obs_dim)
                .finish(),
        }
    }
}

/// `y = h(x) + R^{1/2} ξ`, observed every `interval` model steps.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    operator: ObservationOperator,
    noise_cov: DMatrix<f64>,
    noise_root: DMatrix<f64>,
    noise_chol_l: DMatrix<f64>,
    log_det: f64,
    interval: usize,
}

impl ObservationModel {
    pub fn new(operator: ObservationOperator, noise_cov: DMatrix<f64>, interval: usize) -> Result<Self> {
        let k = match &operator {
            ObservationOperator::Linear(h) => h.nrows(),
            ObservationOperator::Nonlinear { obs_dim, .. } => *obs_dim,
        };
        check_dim(k, noise_cov.nrows())?;
        check_dim(k, noise_cov.ncols())?;
        if interval == 0 {
            return Err(Error::invalid("observation interval must be at least 1"));
        }
        let noise_cov = linalg::symmetrize(&noise_cov);
        let chol = noise_cov
            .clone()
            .cholesky()
            .ok_or(Error::Singular("observation noise covariance must be SPD"))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(ObservationModel {
            operator,
            noise_root: linalg::matrix_sqrt(&noise_cov)?,
            noise_chol_l: chol.l(),
            noise_cov,
            log_det,
            interval,
        })
    }

    pub fn linear(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::new(ObservationOperator::Linear(h), r, 1)
    }

    pub fn with_interval(mut self, interval: usize) -> Result<Self> {
        if interval == 0 {
            return Err(Error::invalid("observation interval must be at least 1"));
        }
        self.interval = interval;
        Ok(self)
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.operator
    }

    /// The matrix `H` for linear operators.
    pub fn linear_operator(&self) -> Option<&DMatrix<f64>> {
        match &self.operator {
            ObservationOperator::Linear(h) => Some(h),
            ObservationOperator::Nonlinear { .. } => None,
        }
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn obs_dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    /// Expected state dimension, when the operator fixes one.
    pub fn state_dim(&self) -> usize {
        match &self.operator {
            ObservationOperator::Linear(h) => h.ncols(),
            ObservationOperator::Nonlinear { state_dim, .. } => *state_dim,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.state_dim(), x.len())?;
        let y = match &self.operator {
            ObservationOperator::Linear(h) => h * x,
            ObservationOperator::Nonlinear { h, .. } => h(x),
        };
        check_dim(self.obs_dim(), y.len())?;
        check_finite(y.iter(), "observation operator output")?;
        Ok(y)
    }

    /// Applies `h` to every ensemble column.
    pub fn apply_columns(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let ObservationOperator::Linear(h) = &self.operator {
            check_dim(h.ncols(), members.nrows())?;
            return Ok(h * members);
        }
        let cols = members
            .column_iter()
            .map(|c| self.apply(&c.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    pub fn observe(&self, x: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.obs_dim(), noise.len())?;
        Ok(self.apply(x)? + &self.noise_root * noise)
    }

    /// Gaussian log-likelihood of the residual `y − h(x)`.
    pub fn log_likelihood(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim(self.obs_dim(), y.len())?;
        let r = y - self.apply(x)?;
        self.residual_log_likelihood(&r)
    }

    pub fn residual_log_likelihood(&self, r: &DVector<f64>) -> Result<f64> {
        check_dim(self.obs_dim(), r.len())?;
        let z = self
            .noise_chol_l
            .solve_lower_triangular(r)
            .ok_or(Error::Singular("observation noise covariance"))?;
        Ok(-0.5 * z.norm_squared() - 0.5 * self.log_det - 0.5 * self.obs_dim() as f64 * (2.0 * PI).ln())
    }
}
