use nalgebra::{DMatrix, DVector};

use super::{ModelSpec, ObservationModel};
use crate::error::{check_dim, Error, Result};
use crate::rng::{standard_normal_vector, RngStream};

/// The two independent noise streams used to build a twin experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TwinSeeds {
    pub truth: RngStream,
    pub obs: RngStream,
}

impl TwinSeeds {
    pub fn from_master(seed: u64) -> Self {
        TwinSeeds {
            truth: RngStream::new(seed, "truth"),
            obs: RngStream::new(seed, "obs"),
        }
    }
}

/// Simulated truth and noisy observations of it.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinExperimentRecord {
    pub times: Vec<f64>,
    /// `N × (n_steps + 1)`, column `n` is the state at step `n`.
    pub truth: DMatrix<f64>,
    /// Step indices at which observations exist.
    pub obs_times: Vec<usize>,
    /// `K × n_obs`.
    pub observations: DMatrix<f64>,
    pub seeds: TwinSeeds,
}

impl TwinExperimentRecord {
    pub fn n_steps(&self) -> usize {
        self.truth.ncols() - 1
    }

    /// Observation taken at `step`, if any.
    pub fn observation_at(&self, step: usize) -> Option<DVector<f64>> {
        self.obs_times
            .binary_search(&step)
            .ok()
            .map(|k| self.observations.column(k).into_owned())
    }
}

pub fn generate_twin_data(
    model: &ModelSpec,
    obs: &ObservationModel,
    x0: &DVector<f64>,
    n_steps: usize,
    seed: u64,
) -> Result<TwinExperimentRecord> {
    generate_twin_data_with_streams(model, obs, x0, n_steps, TwinSeeds::from_master(seed))
}

/// Truth by Euler-Maruyama, observations every `obs.interval()` steps
/// (never at step 0).
pub fn generate_twin_data_with_streams(
    model: &ModelSpec,
    obs: &ObservationModel,
    x0: &DVector<f64>,
    n_steps: usize,
    seeds: TwinSeeds,
) -> Result<TwinExperimentRecord> {
    check_dim(model.dim(), x0.len())?;
    check_dim(model.dim(), obs.state_dim())?;
    if n_steps == 0 {
        return Err(Error::invalid("twin experiment needs at least one step"));
    }
    let n = model.dim();
    let mut truth = DMatrix::zeros(n, n_steps + 1);
    truth.set_column(0, x0);
    let mut obs_times = Vec::new();
    let mut obs_cols = Vec::new();
    let mut x = x0.clone();
    for step in 1..=n_steps {
        let z = standard_normal_vector(&mut seeds.truth.substream(step as u64, 0), n);
        x = model.euler_maruyama_step(&x, &z)?;
        truth.set_column(step, &x);
        if step % obs.interval() == 0 {
            let xi = standard_normal_vector(&mut seeds.obs.substream(step as u64, 0), obs.obs_dim());
            obs_cols.push(obs.observe(&x, &xi)?);
            obs_times.push(step);
        }
    }
    let observations = if obs_cols.is_empty() {
        DMatrix::zeros(obs.obs_dim(), 0)
    } else {
        DMatrix::from_columns(&obs_cols)
    };
    Ok(TwinExperimentRecord {
        times: (0..=n_steps).map(|k| k as f64 * model.dt()).collect(),
        truth,
        obs_times,
        observations,
        seeds,
    })
}
