//! Analysis steps: exact Kalman, particle filters, ensemble Kalman variants,
//! Kalman-Bucy flows and the mean-field transform filter.

mod ensemble_kalman;
mod kalman;
mod meanfield;
mod particle;

pub use ensemble_kalman::{
    enkf_perturbed_step, esrf_optimal_transform, esrf_step, esrf_transform, etkb_filter_path, etkb_filter_step,
    etkb_filter_step_with, square_root_step, FlowIntegrator, SquareRootTransform, TransformMatrix,
};
pub use kalman::{kalman_bucy_moments, kalman_bucy_potential, kalman_predict, kalman_update, KalmanBucyMode};
pub use meanfield::{
    meanfield_transform_step, meanfield_transform_step_with, meanfield_y_velocity, moser_velocity_1d, DensityModel,
    VelocityField1D,
};
pub use particle::{
    bayes_importance_update, guided_smc_step, incremental_bayes_gaussian, incremental_bayes_weights, sir_filter_step,
    GuidedProposal, ProposalLogDensity, ProposalSampler,
};

use nalgebra::DVector;

use crate::models::ModelSpec;
use crate::prob::WeightedEnsemble;
use crate::resampling::effective_sample_size;
use crate::rng::RngStream;
use crate::Result;

/// Per-step filter diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterDiagnostics {
    /// ESS of the analysis weights before any resampling.
    pub ess: f64,
    pub resampled: bool,
    pub last_resample_step: Option<usize>,
    /// `‖x̄ᵃ − x̄ᶠ‖` of the last analysis.
    pub analysis_increment_norm: f64,
}

/// Particle approximation of the filtering distribution at `time_index`.
#[derive(Clone, Debug)]
pub struct FilterState {
    pub ensemble: WeightedEnsemble,
    pub time_index: usize,
    pub diagnostics: FilterDiagnostics,
}

impl FilterState {
    pub fn new(ensemble: WeightedEnsemble) -> Self {
        let ess = effective_sample_size(ensemble.weights().as_slice());
        FilterState {
            ensemble,
            time_index: 0,
            diagnostics: FilterDiagnostics {
                ess,
                resampled: false,
                last_resample_step: None,
                analysis_increment_norm: 0.0,
            },
        }
    }

    /// Stochastic forecast without an analysis, using the same substreams
    /// as the particle filters.
    pub fn forecast(&self, m: &ModelSpec, stream: &RngStream) -> Result<FilterState> {
        let step = self.time_index + 1;
        let ensemble = m.propagate(&self.ensemble, &stream.split("forecast"), step as u64)?;
        Ok(self.advanced(ensemble, step))
    }

    /// State at `time_index` holding `ensemble`, with the ESS refreshed and
    /// the resampling flag cleared.
    pub fn advanced(&self, ensemble: WeightedEnsemble, time_index: usize) -> FilterState {
        let mut diagnostics = self.diagnostics.clone();
        diagnostics.ess = effective_sample_size(ensemble.weights().as_slice());
        diagnostics.resampled = false;
        FilterState {
            ensemble,
            time_index,
            diagnostics,
        }
    }

    /// Replaces the ensemble with an analysis and records the mean increment.
    pub fn with_analysis(&self, analysis: WeightedEnsemble, prior_mean: &DVector<f64>) -> FilterState {
        let mut next = self.advanced(analysis, self.time_index);
        next.diagnostics.analysis_increment_norm = (next.ensemble.mean() - prior_mean).norm();
        next
    }
}
