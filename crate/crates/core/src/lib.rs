//! Ensemble data assimilation.
//!
//! The crate is organised bottom-up:
//!
//! * [`prob`]: Gaussian densities, weighted ensembles, 1D grid densities.
//! * [`transport`]: couplings and transport maps (quantile maps, Gaussian
//!   affine maps, the discrete Monge-Kantorovich problem).
//! * [`models`]: stochastic difference equations, observation operators and
//!   twin-experiment data generation.
//! * [`resampling`]: multinomial, residual and systematic resampling.
//! * [`filters`]: Kalman, particle, ensemble Kalman, square-root,
//!   Kalman-Bucy, guided SMC and mean-field transform analysis steps.
//! * [`samplers`]: MALA and HMC.
//! * [`harness`]: configuration, experiment orchestration and CSV output.

pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod prob;
pub mod resampling;
pub mod rng;
pub mod samplers;
pub mod transport;

pub use error::{Error, Result};
pub use prob::{GaussianDensity, GaussianMixture, GridDensity1D, WeightedEnsemble};
