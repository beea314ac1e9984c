//! Importance weighting, the bootstrap particle filter and guided SMC.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::FilterState;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{matrix_sqrt, spd_solve, symmetrize};
use crate::models::{ModelSpec, ObservationModel};
use crate::prob::{log_sum_exp, GaussianDensity, WeightedEnsemble};
use crate::resampling::{effective_sample_size, resample, ResamplingScheme};
use crate::rng::{standard_normal_vector, DefaultRng, RngStream};

/// Multiplies the weights by `exp(log_factors)` and renormalises in the log domain.
fn reweight(e: &WeightedEnsemble, log_factors: &[f64]) -> Result<WeightedEnsemble> {
    check_dim(e.size(), log_factors.len())?;
    let logw: Vec<f64> = e
        .weights()
        .iter()
        .zip(log_factors)
        .map(|(w, l)| w.ln() + l)
        .collect();
    normalise_log_weights(e, &logw)
}

fn normalise_log_weights(e: &WeightedEnsemble, logw: &[f64]) -> Result<WeightedEnsemble> {
    if logw.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::WeightCollapse);
    }
    let lse = log_sum_exp(logw);
    if !lse.is_finite() {
        return Err(Error::WeightCollapse);
    }
    let w = DVector::from_iterator(logw.len(), logw.iter().map(|l| (l - lse).exp()));
    e.with_weights(w)
}

fn log_likelihoods(e: &WeightedEnsemble, o: &ObservationModel, y0: &DVector<f64>) -> Result<Vec<f64>> {
    check_dim(o.obs_dim(), y0.len())?;
    (0..e.size())
        .into_par_iter()
        .map(|i| o.log_likelihood(&e.member(i), y0))
        .collect()
}

/// Bayes' formula on a weighted ensemble: `w_i ∝ w_i π_Y(y₀ | x_i)`.
pub fn bayes_importance_update(e: &WeightedEnsemble, o: &ObservationModel, y0: &DVector<f64>) -> Result<WeightedEnsemble> {
    let ll = log_likelihoods(e, o, y0)?;
    reweight(e, &ll)
}

/// `D` successive reweightings with the tempered likelihood `π_Y^{1/D}`.
pub fn incremental_bayes_weights(
    e: &WeightedEnsemble,
    o: &ObservationModel,
    y0: &DVector<f64>,
    d: usize,
) -> Result<WeightedEnsemble> {
    if d == 0 {
        return Err(Error::invalid("number of increments must be at least 1"));
    }
    let ll = log_likelihoods(e, o, y0)?;
    let step: Vec<f64> = ll.iter().map(|l| l / d as f64).collect();
    let mut out = e.clone();
    for _ in 0..d {
        out = reweight(&out, &step)?;
    }
    Ok(out)
}

/// Gaussian-density version: `D` Kalman updates with noise `D R`.
pub fn incremental_bayes_gaussian(
    prior: &GaussianDensity,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y0: &DVector<f64>,
    d: usize,
) -> Result<GaussianDensity> {
    super::kalman_bucy_moments(prior, h, r, y0, d, super::KalmanBucyMode::Discrete)
}

fn forecast_stream(stream: &RngStream) -> RngStream {
    stream.split("forecast")
}

fn maybe_resample(
    mut state: FilterState,
    prior_mean: &DVector<f64>,
    scheme: ResamplingScheme,
    ess_threshold: f64,
    stream: &RngStream,
) -> Result<FilterState> {
    let ess = effective_sample_size(state.ensemble.weights().as_slice());
    state.diagnostics.ess = ess;
    state.diagnostics.resampled = false;
    if ess < ess_threshold {
        let mut rng = stream.split("resample").substream(state.time_index as u64, 0);
        let (e, _) = resample(scheme, &state.ensemble, &mut rng)?;
        state.ensemble = e;
        state.diagnostics.resampled = true;
        state.diagnostics.last_resample_step = Some(state.time_index);
    }
    state.diagnostics.analysis_increment_norm = (state.ensemble.mean() - prior_mean).norm();
    Ok(state)
}

/// Bootstrap particle filter step: Euler-Maruyama forecast, Bayes
/// reweighting, then resampling when the ESS falls below `ess_threshold`.
///
/// Member `i` at step `n` draws its forecast noise from the substream
/// `(n, i)` of `stream.split("forecast")`.
pub fn sir_filter_step(
    s: &FilterState,
    m: &ModelSpec,
    o: &ObservationModel,
    y0: &DVector<f64>,
    scheme: ResamplingScheme,
    ess_threshold: f64,
    stream: &RngStream,
) -> Result<FilterState> {
    let step = s.time_index + 1;
    let forecast = m.propagate(&s.ensemble, &forecast_stream(stream), step as u64)?;
    let prior_mean = forecast.mean();
    let analysed = bayes_importance_update(&forecast, o, y0)?;
    let state = FilterState {
        ensemble: analysed,
        time_index: step,
        diagnostics: s.diagnostics.clone(),
    };
    maybe_resample(state, &prior_mean, scheme, ess_threshold, stream)
}

pub type ProposalSampler = dyn Fn(&DVector<f64>, &DVector<f64>, &mut DefaultRng) -> Result<DVector<f64>> + Send + Sync;
pub type ProposalLogDensity = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> Result<f64> + Send + Sync;

/// Conditional proposal `π̃(x' | x, y₀)`: a sampler `(x, y₀, rng) ↦ x'` and
/// its log density `(x', x, y₀) ↦ ln π̃`.
#[derive(Clone)]
pub struct GuidedProposal {
    sample: Arc<ProposalSampler>,
    log_density: Arc<ProposalLogDensity>,
}

impl fmt::Debug for GuidedProposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GuidedProposal")
    }
}

impl GuidedProposal {
    pub fn new(sample: Arc<ProposalSampler>, log_density: Arc<ProposalLogDensity>) -> Self {
        GuidedProposal { sample, log_density }
    }

    pub fn sample(&self, x: &DVector<f64>, y0: &DVector<f64>, rng: &mut DefaultRng) -> Result<DVector<f64>> {
        (self.sample)(x, y0, rng)
    }

    pub fn log_density(&self, x_new: &DVector<f64>, x: &DVector<f64>, y0: &DVector<f64>) -> Result<f64> {
        (self.log_density)(x_new, x, y0)
    }

    /// The model transition itself; guided SMC then reduces to the bootstrap filter.
    pub fn transition(model: &ModelSpec) -> Self {
        let (m1, m2) = (model.clone(), model.clone());
        GuidedProposal {
            sample: Arc::new(move |x, _y, rng| {
                let z = standard_normal_vector(rng, m1.dim());
                m1.euler_maruyama_step(x, &z)
            }),
            log_density: Arc::new(move |xn, x, _y| m2.transition_log_density(x, xn)),
        }
    }

    /// Gaussian proposal `N(mean(x, y₀), cov)`.
    pub fn gaussian<F>(mean: F, cov: DMatrix<f64>) -> Result<Self>
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        let root = matrix_sqrt(&cov)?;
        let shape = GaussianDensity::new(DVector::zeros(cov.nrows()), cov)?;
        let mean = Arc::new(mean);
        let m2 = Arc::clone(&mean);
        Ok(GuidedProposal {
            sample: Arc::new(move |x, y, rng| {
                let z = standard_normal_vector(rng, root.nrows());
                Ok(mean(x, y)? + &root * z)
            }),
            log_density: Arc::new(move |xn, x, y| shape.log_pdf(&(xn - m2(x, y)?))),
        })
    }

    /// Nudged proposal: mean `x̂ + K (y₀ − h(x̂))` with `x̂ = x + Δt f(x)`,
    /// covariance `2 Δt Q`.
    pub fn nudged(model: &ModelSpec, obs: &ObservationModel, gain: DMatrix<f64>) -> Result<Self> {
        check_dim(model.dim(), gain.nrows())?;
        check_dim(obs.obs_dim(), gain.ncols())?;
        let (m, o) = (model.clone(), obs.clone());
        Self::gaussian(
            move |x, y| {
                let xh = m.drift_step(x)?;
                let innov = y - o.apply(&xh)?;
                Ok(&xh + &gain * innov)
            },
            model.transition_cov(),
        )
    }

    /// Nudged proposal with `K = P̂_xy (P̂_yy + R)⁻¹` estimated from the
    /// noise-free forecast of `e` plus the transition covariance.
    pub fn nudged_from_ensemble(model: &ModelSpec, obs: &ObservationModel, e: &WeightedEnsemble) -> Result<Self> {
        let fc = model.propagate_deterministic(e)?;
        let ys = obs.apply_columns(fc.members())?;
        let y_ens = WeightedEnsemble::new(ys, e.weights().clone())?;
        let dx = fc.deviations();
        let dy = y_ens.deviations();
        let mut wdx = dx.clone();
        for (mut c, w) in wdx.column_iter_mut().zip(e.weights().iter()) {
            c *= *w;
        }
        let norm = 1.0 - e.weights().iter().map(|w| w * w).sum::<f64>();
        let norm = if norm > f64::EPSILON { norm } else { 1.0 };
        let mut wdy = dy.clone();
        for (mut c, w) in wdy.column_iter_mut().zip(e.weights().iter()) {
            c *= *w;
        }
        let qt = model.transition_cov();
        // cross and observation-space covariances of x' = x̂ + N(0, 2ΔtQ), linearised
        let pxy = &wdx * dy.transpose() / norm;
        let pyy = symmetrize(&(&wdy * dy.transpose() / norm + obs.noise_cov()));
        let pxy = match obs.linear_operator() {
            Some(h) => pxy + &qt * h.transpose(),
            None => pxy,
        };
        let pyy = match obs.linear_operator() {
            Some(h) => symmetrize(&(pyy + h * &qt * h.transpose())),
            None => pyy,
        };
        let gain = spd_solve(&pyy, &pxy.transpose())?.transpose();
        Self::nudged(model, obs, gain)
    }

    /// Exact conditional `π(x' | x, y₀)` for a linear observation and
    /// Gaussian transition: the locally optimal proposal.
    pub fn optimal_linear_gaussian(model: &ModelSpec, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        check_dim(model.dim(), h.ncols())?;
        let qt = model.transition_cov();
        let s = symmetrize(&(h * &qt * h.transpose() + r));
        let gain = spd_solve(&s, &(h * &qt))?.transpose();
        let cov = symmetrize(&(&qt - &gain * h * &qt));
        let (m, h) = (model.clone(), h.clone());
        Self::gaussian(
            move |x, y| {
                let mu = m.drift_step(x)?;
                Ok(&mu + &gain * (y - &h * &mu))
            },
            cov,
        )
    }
}

/// Guided SMC step: `x_i' ~ π̃(·|x_i, y₀)` and
/// `w_i ∝ w_i π_Y(y₀|x_i') π(x_i'|x_i) / π̃(x_i'|x_i, y₀)`.
///
/// Uses the same substreams as [`sir_filter_step`], so the transition
/// proposal reproduces the bootstrap filter bit for bit.
pub fn guided_smc_step(
    s: &FilterState,
    m: &ModelSpec,
    o: &ObservationModel,
    y0: &DVector<f64>,
    prop: &GuidedProposal,
    scheme: ResamplingScheme,
    ess_threshold: f64,
    stream: &RngStream,
) -> Result<FilterState> {
    check_dim(m.dim(), s.ensemble.dim())?;
    check_dim(o.obs_dim(), y0.len())?;
    let step = s.time_index + 1;
    let fs = forecast_stream(stream);
    let e = &s.ensemble;
    let moved: Vec<(DVector<f64>, f64)> = (0..e.size())
        .into_par_iter()
        .map(|i| {
            let x = e.member(i);
            let mut rng = fs.substream(step as u64, i as u64);
            let xn = prop.sample(&x, y0, &mut rng)?;
            check_finite(xn.iter(), "proposal sample")?;
            let ll = o.log_likelihood(&xn, y0)?;
            let lt = m.transition_log_density(&x, &xn)?;
            let lp = prop.log_density(&xn, &x, y0)?;
            if !lp.is_finite() {
                return Err(Error::NonFinite("proposal log density"));
            }
            Ok((xn, ll + (lt - lp)))
        })
        .collect::<Result<Vec<_>>>()?;
    let cols: Vec<DVector<f64>> = moved.iter().map(|(x, _)| x.clone()).collect();
    let forecast = WeightedEnsemble::new(DMatrix::from_columns(&cols), e.weights().clone())?;
    let prior_mean = forecast.mean();
    let logw: Vec<f64> = e
        .weights()
        .iter()
        .zip(&moved)
        .map(|(w, (_, f))| w.ln() + f)
        .collect();
    let analysed = normalise_log_weights(&forecast, &logw)?;
    let state = FilterState {
        ensemble: analysed,
        time_index: step,
        diagnostics: s.diagnostics.clone(),
    };
    maybe_resample(state, &prior_mean, scheme, ess_threshold, stream)
}
