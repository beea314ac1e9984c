//! Forward models: Euler-Maruyama dynamics, observation operators and
//! twin-experiment data.

mod dynamics;
mod observation;
mod twin;

pub use dynamics::{Drift, ModelSpec, LORENZ63_BETA, LORENZ63_RHO, LORENZ63_SIGMA};
pub use observation::{ObservationModel, ObservationOperator};
pub use twin::{generate_twin_data, generate_twin_data_with_streams, TwinExperimentRecord, TwinSeeds};
