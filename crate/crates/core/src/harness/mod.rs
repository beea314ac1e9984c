//! Configuration, twin-experiment orchestration and metrics output.

mod config;
mod io;
mod run;

pub use config::{
    Experiment, ExperimentConfig, FilterKind, FilterSection, ForecastMode, ModelSection, ObservationSection,
    ProposalKind, RunSection,
};
pub use run::{
    compute_rmse, experiment_twin_data, format_float, initial_ensemble, kalman_reference_run, run_experiment, run_twin_experiment,
    ExperimentOutput, MetricsRecord, StepMetrics,
};
pub use io::{chain_csv, coupling_csv, parse_weighted_points, twin_csv};
