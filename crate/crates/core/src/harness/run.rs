//! Twin-experiment driver, exact Kalman reference and metrics output.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use super::config::{Experiment, ExperimentConfig, FilterKind, ForecastMode, ProposalKind};
use crate::error::{check_dim, Error, Result};
use crate::filters::{
    enkf_perturbed_step, etkb_filter_step_with, guided_smc_step, kalman_predict, kalman_update,
    meanfield_transform_step_with, sir_filter_step, square_root_step, FilterState, GuidedProposal,
    SquareRootTransform,
};
use crate::models::{generate_twin_data_with_streams, TwinExperimentRecord, TwinSeeds};
use crate::prob::{GaussianDensity, WeightedEnsemble};
use crate::rng::{standard_normal_vector, RngStream};

/// Metrics of one assimilation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub time: f64,
    pub truth: DVector<f64>,
    pub mean: DVector<f64>,
    /// `√(tr P / N)`.
    pub spread: f64,
    /// `‖x̄ − x_true‖ / √N`.
    pub rmse: f64,
    pub ess: f64,
    pub resampled: bool,
    /// True when an observation was assimilated at this step.
    pub analysis: bool,
    pub oracle_mean: Option<DVector<f64>>,
    /// `max_k |x̄_k − m_k|` against the Kalman reference mean.
    pub oracle_gap: Option<f64>,
    /// `max_kl |P_kl − P^ref_kl|`; not written to CSV.
    pub oracle_cov_gap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub state_dim: usize,
    pub with_oracle: bool,
    pub steps: Vec<StepMetrics>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl MetricsRecord {
    pub fn mean_rmse(&self) -> f64 {
        mean_of(self.steps.iter().map(|s| s.rmse))
    }

    pub fn mean_spread(&self) -> f64 {
        mean_of(self.steps.iter().map(|s| s.spread))
    }

    /// Time-mean RMSE over steps with an observation.
    pub fn mean_analysis_rmse(&self) -> f64 {
        mean_of(self.steps.iter().filter(|s| s.analysis).map(|s| s.rmse))
    }

    pub fn max_oracle_gap(&self) -> Option<f64> {
        self.steps.iter().map(|s| s.oracle_gap).try_fold(0.0_f64, |a, g| g.map(|g| a.max(g)))
    }

    pub fn max_oracle_cov_gap(&self) -> Option<f64> {
        self.steps.iter().map(|s| s.oracle_cov_gap).try_fold(0.0_f64, |a, g| g.map(|g| a.max(g)))
    }

    pub fn csv_header(&self) -> String {
        let n = self.state_dim;
        let mut cols = vec!["step".to_string(), "time".to_string()];
        cols.extend((1..=n).map(|k| format!("truth_{k}")));
        cols.extend((1..=n).map(|k| format!("mean_{k}")));
        cols.extend(["spread", "rmse", "ess", "resampled"].map(String::from));
        if self.with_oracle {
            cols.extend((1..=n).map(|k| format!("oracle_mean_{k}")));
            cols.push("oracle_gap".into());
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for s in &self.steps {
            let mut fields = vec![s.step.to_string(), format_float(s.time)];
            fields.extend(s.truth.iter().map(|v| format_float(*v)));
            fields.extend(s.mean.iter().map(|v| format_float(*v)));
            fields.push(format_float(s.spread));
            fields.push(format_float(s.rmse));
            fields.push(format_float(s.ess));
            fields.push(u8::from(s.resampled).to_string());
            if self.with_oracle {
                if let (Some(m), Some(g)) = (&s.oracle_mean, s.oracle_gap) {
                    fields.extend(m.iter().map(|v| format_float(*v)));
                    fields.push(format_float(g));
                }
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `√(mean_n ‖est_n − truth_n‖² / N)`.
pub fn compute_rmse(estimate: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid(format!(
            "sequence lengths differ: {} estimates, {} truth states",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::invalid("rmse of an empty sequence"));
    }
    let mut total = 0.0;
    for (e, t) in estimate.iter().zip(truth) {
        check_dim(t.len(), e.len())?;
        total += (e - t).norm_squared() / t.len() as f64;
    }
    Ok((total / estimate.len() as f64).sqrt())
}

/// Everything a run produces besides the metrics.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub metrics: MetricsRecord,
    /// `None` when `n_steps = 0`.
    pub twin: Option<TwinExperimentRecord>,
    pub initial_ensemble: WeightedEnsemble,
    pub final_state: FilterState,
    pub oracle: Option<Vec<GaussianDensity>>,
}

fn initial_truth(ex: &Experiment, seeds: &TwinSeeds) -> Result<DVector<f64>> {
    match &ex.truth_initial {
        Some(x) => Ok(x.clone()),
        None => {
            let z = standard_normal_vector(&mut seeds.truth.substream(0, 0), ex.model.dim());
            ex.initial.sample_with(&z)
        }
    }
}

/// Initial ensemble drawn from the configured initial distribution.
pub fn initial_ensemble(ex: &Experiment) -> Result<WeightedEnsemble> {
    let stream = RngStream::new(ex.seed, "filter").split("initial");
    let cols = (0..ex.ensemble_size)
        .map(|i| {
            let z = standard_normal_vector(&mut stream.substream(0, i as u64), ex.model.dim());
            ex.initial.sample_with(&z)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightedEnsemble::from_columns(&cols)
}

/// Truth and observations of a validated experiment; `None` for `n_steps = 0`.
pub fn experiment_twin_data(ex: &Experiment) -> Result<Option<TwinExperimentRecord>> {
    twin_data(ex)
}

fn twin_data(ex: &Experiment) -> Result<Option<TwinExperimentRecord>> {
    if ex.n_steps == 0 {
        return Ok(None);
    }
    let seeds = TwinSeeds::from_master(ex.seed);
    let x0 = initial_truth(ex, &seeds)?;
    generate_twin_data_with_streams(&ex.model, &ex.observation, &x0, ex.n_steps, seeds).map(Some)
}

fn oracle_initial(ex: &Experiment, ensemble: &WeightedEnsemble) -> Result<GaussianDensity> {
    if ex.oracle_from_ensemble {
        GaussianDensity::new(ensemble.mean(), ensemble.cov()?)
    } else {
        Ok(ex.initial.clone())
    }
}

/// Exact filtering distributions at steps `0..=n_steps` for a linear model.
fn kalman_reference(
    ex: &Experiment,
    twin: Option<&TwinExperimentRecord>,
    initial: GaussianDensity,
) -> Result<Vec<GaussianDensity>> {
    let (f, c) = ex
        .model
        .linear_transition()
        .ok_or_else(|| Error::config("the Kalman reference needs a linear model"))?;
    let h = ex
        .observation
        .linear_operator()
        .ok_or_else(|| Error::config("the Kalman reference needs a linear observation operator"))?;
    let noise = ex.model.transition_cov();
    let mut out = vec![initial];
    for step in 1..=ex.n_steps {
        let mut g = kalman_predict(out.last().expect("non-empty"), &f, &c, &noise)?;
        if let Some(y) = twin.and_then(|t| t.observation_at(step)) {
            g = kalman_update(&g, h, ex.observation.noise_cov(), &y)?;
        }
        out.push(g);
    }
    Ok(out)
}

/// Exact Kalman filter on the configured twin experiment; entry `n` is the
/// filtering distribution at step `n`.
pub fn kalman_reference_run(cfg: &ExperimentConfig) -> Result<Vec<GaussianDensity>> {
    let ex = cfg.validate()?;
    let twin = twin_data(&ex)?;
    let init = oracle_initial(&ex, &initial_ensemble(&ex)?)?;
    kalman_reference(&ex, twin.as_ref(), init)
}

fn forecast(ex: &Experiment, s: &FilterState, stream: &RngStream) -> Result<FilterState> {
    match ex.forecast {
        ForecastMode::Stochastic => s.forecast(&ex.model, stream),
        ForecastMode::Deterministic => {
            let e = ex.model.deterministic_ensemble_step(&s.ensemble)?;
            Ok(s.advanced(e, s.time_index + 1))
        }
    }
}

fn assimilate(ex: &Experiment, s: &FilterState, y: &DVector<f64>, stream: &RngStream) -> Result<FilterState> {
    let threshold = ex.ess_fraction * ex.ensemble_size as f64;
    match ex.filter {
        FilterKind::Sir => sir_filter_step(s, &ex.model, &ex.observation, y, ex.scheme, threshold, stream),
        FilterKind::Guided => {
            let prop = match ex.proposal {
                ProposalKind::Transition => GuidedProposal::transition(&ex.model),
                ProposalKind::Nudged => GuidedProposal::nudged_from_ensemble(&ex.model, &ex.observation, &s.ensemble)?,
            };
            guided_smc_step(s, &ex.model, &ex.observation, y, &prop, ex.scheme, threshold, stream)
        }
        kind => {
            let f = forecast(ex, s, stream)?;
            let prior_mean = f.ensemble.mean();
            let e = &f.ensemble;
            let r = ex.observation.noise_cov();
            let h = || ex.observation.linear_operator().expect("validated linear operator");
            let analysis = match kind {
                FilterKind::Enkf => {
                    let mut rng = stream.split("enkf").substream(f.time_index as u64, 0);
                    enkf_perturbed_step(e, h(), r, y, &mut rng)?
                }
                FilterKind::Esrf => square_root_step(e, h(), r, y, SquareRootTransform::Symmetric, ex.bias_correction)?,
                FilterKind::EsrfOt => square_root_step(e, h(), r, y, SquareRootTransform::Optimal, ex.bias_correction)?,
                FilterKind::Etkbf => etkb_filter_step_with(e, h(), r, y, ex.n_substeps, ex.integrator)?,
                FilterKind::Meanfield => {
                    meanfield_transform_step_with(e, &ex.observation, y, ex.n_substeps, ex.density, ex.integrator)?
                }
                FilterKind::Sir | FilterKind::Guided => unreachable!(),
            };
            Ok(f.with_analysis(analysis, &prior_mean))
        }
    }
}

fn step_metrics(
    s: &FilterState,
    twin: &TwinExperimentRecord,
    analysis: bool,
    oracle: Option<&GaussianDensity>,
) -> Result<StepMetrics> {
    let step = s.time_index;
    let truth = twin.truth.column(step).into_owned();
    let mean = s.ensemble.mean();
    let n = truth.len() as f64;
    let cov = s.ensemble.cov()?;
    Ok(StepMetrics {
        step,
        time: twin.times[step],
        spread: (cov.trace().max(0.0) / n).sqrt(),
        rmse: ((&mean - &truth).norm_squared() / n).sqrt(),
        ess: s.diagnostics.ess,
        resampled: s.diagnostics.resampled,
        analysis,
        oracle_mean: oracle.map(|g| g.mean().clone()),
        oracle_gap: oracle.map(|g| (&mean - g.mean()).amax()),
        oracle_cov_gap: oracle.map(|g| (&cov - g.cov()).amax()),
        truth,
        mean,
    })
}

/// Runs a validated experiment without touching the file system.
pub fn run_experiment(ex: &Experiment) -> Result<ExperimentOutput> {
    let ensemble = initial_ensemble(ex)?;
    let twin = twin_data(ex)?;
    let oracle = if ex.oracle {
        Some(kalman_reference(ex, twin.as_ref(), oracle_initial(ex, &ensemble)?)?)
    } else {
        None
    };
    let stream = RngStream::new(ex.seed, "filter");
    let mut state = FilterState::new(ensemble.clone());
    let mut metrics = MetricsRecord {
        state_dim: ex.model.dim(),
        with_oracle: ex.oracle,
        steps: Vec::with_capacity(ex.n_steps),
    };
    if let Some(twin) = &twin {
        for step in 1..=ex.n_steps {
            let y = twin.observation_at(step);
            state = match &y {
                Some(y) => assimilate(ex, &state, y, &stream)?,
                None => forecast(ex, &state, &stream)?,
            };
            debug_assert_eq!(state.time_index, step);
            let reference = oracle.as_ref().map(|o| &o[step]);
            metrics.steps.push(step_metrics(&state, twin, y.is_some(), reference)?);
        }
    }
    Ok(ExperimentOutput {
        metrics,
        twin,
        initial_ensemble: ensemble,
        final_state: state,
        oracle,
    })
}

/// Validates `cfg`, runs it and writes the CSV to `run.output` when set.
pub fn run_twin_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let ex = cfg.validate()?;
    let out = run_experiment(&ex)?;
    if let Some(path) = &cfg.run.output {
        out.metrics.write_csv(Path::new(path))?;
    }
    Ok(out)
}
