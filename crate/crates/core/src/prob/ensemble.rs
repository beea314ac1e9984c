use nalgebra::{DMatrix, DVector};

use super::WEIGHT_SUM_TOL;
use crate::error::{check_dim, check_finite, Error, Result};

/// `M` state columns with simplex weights. This is the state every filter
/// carries between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedEnsemble {
    members: DMatrix<f64>,
    weights: DVector<f64>,
}

/// Bayesian point estimator applied to a weighted ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointEstimate {
    Mean,
    /// Componentwise weighted median.
    Median,
    /// Member with the largest weight.
    Map,
}

impl WeightedEnsemble {
    pub fn new(members: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if members.ncols() == 0 {
            return Err(Error::DegenerateEnsemble("ensemble has no members".into()));
        }
        check_dim(members.ncols(), weights.len())?;
        check_finite(members.iter(), "ensemble members")?;
        validate_weights(weights.as_slice())?;
        Ok(WeightedEnsemble { members, weights })
    }

    /// Equal weights `1/M`.
    pub fn uniform(members: DMatrix<f64>) -> Result<Self> {
        let m = members.ncols();
        if m == 0 {
            return Err(Error::DegenerateEnsemble("ensemble has no members".into()));
        }
        check_finite(members.iter(), "ensemble members")?;
        Ok(WeightedEnsemble {
            members,
            weights: DVector::from_element(m, 1.0 / m as f64),
        })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::DegenerateEnsemble("ensemble has no members".into()));
        }
        Self::uniform(DMatrix::from_columns(columns))
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn member(&self, i: usize) -> DVector<f64> {
        self.members.column(i).into_owned()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.members, self.weights)
    }

    /// True when every weight is bitwise equal to the first one.
    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }

    pub fn with_members(&self, members: DMatrix<f64>) -> Result<Self> {
        Self::new(members, self.weights.clone())
    }

    pub fn with_weights(&self, weights: DVector<f64>) -> Result<Self> {
        Self::new(self.members.clone(), weights)
    }

    /// Weighted mean `Σ w_i x_i`; the plain average for uniform weights.
    pub fn mean(&self) -> DVector<f64> {
        if self.is_uniform() {
            self.members.column_sum() / self.size() as f64
        } else {
            &self.members * &self.weights
        }
    }

    /// Deviation matrix `δX = (x_1 - x̄, ..., x_M - x̄)`.
    pub fn deviations(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut d = self.members.clone();
        for mut col in d.column_iter_mut() {
            col -= &mean;
        }
        d
    }

    /// Empirical covariance.
    ///
    /// Uniform weights use `1/(M-1)`; general weights use the unbiased
    /// normalisation `Σ w_i δx_i δx_iᵀ / (1 - Σ w_i²)`, which reduces to the
    /// former for equal weights.
    pub fn cov(&self) -> Result<DMatrix<f64>> {
        let m = self.size();
        if m < 2 {
            return Err(Error::DegenerateEnsemble(
                "covariance needs at least two members".into(),
            ));
        }
        let d = self.deviations();
        let n = self.dim();
        if self.is_uniform() {
            let p = &d * d.transpose() / (m - 1) as f64;
            return Ok(crate::linalg::symmetrize(&p));
        }
        let denom = 1.0 - self.weights.iter().map(|w| w * w).sum::<f64>();
        if denom <= f64::EPSILON {
            return Ok(DMatrix::zeros(n, n));
        }
        let mut scaled = d.clone();
        for (mut col, &w) in scaled.column_iter_mut().zip(self.weights.iter()) {
            col *= w;
        }
        let p = scaled * d.transpose() / denom;
        Ok(crate::linalg::symmetrize(&p))
    }

    pub fn point_estimate(&self, loss: PointEstimate) -> DVector<f64> {
        match loss {
            PointEstimate::Mean => self.mean(),
            PointEstimate::Median => DVector::from_iterator(
                self.dim(),
                (0..self.dim()).map(|k| {
                    let row: Vec<f64> = self.members.row(k).iter().copied().collect();
                    weighted_median(&row, self.weights.as_slice())
                }),
            ),
            PointEstimate::Map => {
                let imax = (0..self.size())
                    .max_by(|&a, &b| {
                        self.weights[a]
                            .total_cmp(&self.weights[b])
                            .then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                self.member(imax)
            }
        }
    }
}

/// Smallest value whose cumulative weight reaches one half.
fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= 0.5 - 1e-15 {
            return values[i];
        }
    }
    values[*order.last().unwrap()]
}

pub(crate) fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}
