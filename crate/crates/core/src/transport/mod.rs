//! Couplings and transport maps.

mod gaussian_maps;
mod one_dim;
mod simplex;

pub use gaussian_maps::{
    gaussian_affine_coupling, gaussian_optimal_map, gaussian_optimal_map_factored, AffineMap,
};
pub use one_dim::{
    knothe_rosenblatt_2d, quantile_transport_1d, wasserstein2_1d, GridMap1D, KnotheRosenblattMap,
    KrOrdering,
};
pub use simplex::{
    discrete_optimal_coupling, squared_distance_cost, CouplingMatrix, MAX_COUPLING_SIZE,
};
