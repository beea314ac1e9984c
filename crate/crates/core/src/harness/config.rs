//! Experiment configuration: a TOML document with `[model]`,
//! `[observation]`, `[filter]` and `[run]` tables. Matrices are arrays of
//! rows, e.g. `Q = [[0.1, 0.0], [0.0, 0.1]]`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filters::{DensityModel, FlowIntegrator};
use crate::models::{Drift, ModelSpec, ObservationModel, ObservationOperator};
use crate::prob::GaussianDensity;
use crate::resampling::ResamplingScheme;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"linear"` or `"lorenz63"`.
    pub name: String,
    pub dt: f64,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "A", default)]
    pub a: Option<Rows>,
    #[serde(default)]
    pub u: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    pub initial_mean: Vec<f64>,
    pub initial_cov: Rows,
    /// Fixed initial truth; drawn from the initial distribution when absent.
    #[serde(default)]
    pub truth_initial: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    #[serde(rename = "H", default)]
    pub h_matrix: Option<Rows>,
    /// Named operator: `"identity"` or `"cubic"` (componentwise `x³`).
    #[serde(rename = "h", default)]
    pub h_name: Option<String>,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(default = "default_interval")]
    pub interval: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub name: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub n_substeps: usize,
    /// Resample when ESS < `ess_threshold · M`.
    #[serde(default = "default_ess")]
    pub ess_threshold: f64,
    #[serde(default = "default_scheme")]
    pub resampling: String,
    #[serde(default)]
    pub bias_correction: bool,
    #[serde(default = "default_density")]
    pub density: String,
    /// `"stochastic"` (Euler-Maruyama) or `"deterministic"` (inflation ODE).
    #[serde(default = "default_forecast")]
    pub forecast: String,
    #[serde(default = "default_integrator")]
    pub integrator: String,
    /// Guided SMC proposal: `"nudged"` or `"transition"`.
    #[serde(default = "default_proposal")]
    pub proposal: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_steps: usize,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub oracle: bool,
    /// `"ensemble"`: the reference starts from the initial ensemble's
    /// empirical moments; `"prior"`: from `initial_mean`, `initial_cov`.
    #[serde(default = "default_oracle_initial")]
    pub oracle_initial: String,
}

fn default_interval() -> usize {
    1
}
fn default_substeps() -> usize {
    20
}
fn default_ess() -> f64 {
    crate::resampling::DEFAULT_ESS_FRACTION
}
fn default_scheme() -> String {
    "residual".into()
}
fn default_density() -> String {
    "gaussian".into()
}
fn default_forecast() -> String {
    "stochastic".into()
}
fn default_integrator() -> String {
    "heun".into()
}
fn default_proposal() -> String {
    "nudged".into()
}
fn default_oracle_initial() -> String {
    "ensemble".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub observation: ObservationSection,
    pub filter: FilterSection,
    pub run: RunSection,
    #[serde(skip)]
    source: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Sir,
    Enkf,
    Esrf,
    EsrfOt,
    Etkbf,
    Guided,
    Meanfield,
}

impl FilterKind {
    pub fn is_particle(self) -> bool {
        matches!(self, FilterKind::Sir | FilterKind::Guided)
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sir" => FilterKind::Sir,
            "enkf" => FilterKind::Enkf,
            "esrf" => FilterKind::Esrf,
            "esrf-ot" => FilterKind::EsrfOt,
            "etkbf" => FilterKind::Etkbf,
            "guided" => FilterKind::Guided,
            "meanfield" => FilterKind::Meanfield,
            other => return Err(Error::config(format!("unknown filter '{other}'"))),
        })
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Sir => "sir",
            FilterKind::Enkf => "enkf",
            FilterKind::Esrf => "esrf",
            FilterKind::EsrfOt => "esrf-ot",
            FilterKind::Etkbf => "etkbf",
            FilterKind::Guided => "guided",
            FilterKind::Meanfield => "meanfield",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForecastMode {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    Nudged,
    Transition,
}

/// Validated, ready-to-run form of an [`ExperimentConfig`].
#[derive(Clone, Debug)]
pub struct Experiment {
    pub model: ModelSpec,
    pub observation: ObservationModel,
    pub initial: GaussianDensity,
    pub truth_initial: Option<DVector<f64>>,
    pub filter: FilterKind,
    pub ensemble_size: usize,
    pub seed: u64,
    pub n_substeps: usize,
    pub ess_fraction: f64,
    pub scheme: ResamplingScheme,
    pub bias_correction: bool,
    pub density: DensityModel,
    pub forecast: ForecastMode,
    pub integrator: FlowIntegrator,
    pub proposal: ProposalKind,
    pub n_steps: usize,
    pub oracle: bool,
    pub oracle_from_ensemble: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.source = Some(text.to_string());
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Error pointing at `section.key` in the source text, when available.
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.source.as_deref().and_then(|s| find_key_line(s, section, key)),
            message: format!("[{section}] {key}: {}", message.into()),
        }
    }

    fn matrix(&self, section: &str, key: &str, rows: &Rows) -> Result<DMatrix<f64>> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
            return Err(self.err(section, key, "matrix rows must be non-empty and of equal length"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(self.err(section, key, "entries must be finite"));
        }
        Ok(DMatrix::from_row_slice(nr, nc, &flat))
    }

    fn square(&self, section: &str, key: &str, rows: &Rows, n: usize) -> Result<DMatrix<f64>> {
        let m = self.matrix(section, key, rows)?;
        if m.nrows() != n || m.ncols() != n {
            return Err(self.err(section, key, format!("expected a {n}x{n} matrix, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }

    fn vector(&self, section: &str, key: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
        if v.len() != n {
            return Err(self.err(section, key, format!("expected {n} entries, got {}", v.len())));
        }
        Ok(DVector::from_column_slice(v))
    }

    fn model_spec(&self) -> Result<ModelSpec> {
        let s = &self.model;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(self.err("model", "dt", "must be positive"));
        }
        let drift = match s.name.as_str() {
            "linear" => {
                let a_rows = s.a.as_ref().ok_or_else(|| self.err("model", "A", "required for the linear model"))?;
                let n = a_rows.len();
                let a = self.square("model", "A", a_rows, n)?;
                let u = match &s.u {
                    Some(u) => self.vector("model", "u", u, n)?,
                    None => DVector::zeros(n),
                };
                Drift::Linear { a, u }
            }
            "lorenz63" => {
                if s.a.is_some() || s.u.is_some() {
                    return Err(self.err("model", "A", "only valid for the linear model"));
                }
                Drift::Lorenz63 {
                    sigma: s.sigma.unwrap_or(crate::models::LORENZ63_SIGMA),
                    rho: s.rho.unwrap_or(crate::models::LORENZ63_RHO),
                    beta: s.beta.unwrap_or(crate::models::LORENZ63_BETA),
                }
            }
            other => return Err(self.err("model", "name", format!("unknown model '{other}'"))),
        };
        let n = drift.dim();
        let q = self.square("model", "Q", &s.q, n)?;
        ModelSpec::new(drift, q, s.dt).map_err(|e| self.err("model", "Q", e.to_string()))
    }

    fn observation_model(&self, n: usize) -> Result<ObservationModel> {
        let s = &self.observation;
        let op = match (&s.h_matrix, &s.h_name) {
            (Some(_), Some(_)) => return Err(self.err("observation", "h", "give either H or h, not both")),
            (Some(rows), None) => {
                let h = self.matrix("observation", "H", rows)?;
                if h.ncols() != n {
                    return Err(self.err("observation", "H", format!("expected {n} columns, got {}", h.ncols())));
                }
                ObservationOperator::Linear(h)
            }
            (None, Some(name)) => match name.as_str() {
                "identity" => ObservationOperator::Linear(DMatrix::identity(n, n)),
                "cubic" => ObservationOperator::Nonlinear {
                    state_dim: n,
                    obs_dim: n,
                    h: std::sync::Arc::new(|x: &DVector<f64>| x.map(|v| v * v * v)),
                },
                other => return Err(self.err("observation", "h", format!("unknown operator '{other}'"))),
            },
            (None, None) => return Err(self.err("observation", "H", "an observation operator is required")),
        };
        let k = match &op {
            ObservationOperator::Linear(h) => h.nrows(),
            ObservationOperator::Nonlinear { obs_dim, .. } => *obs_dim,
        };
        let r = self.square("observation", "R", &s.r, k)?;
        if s.interval == 0 {
            return Err(self.err("observation", "interval", "must be at least 1"));
        }
        ObservationModel::new(op, r, s.interval).map_err(|e| self.err("observation", "R", e.to_string()))
    }

    /// Resolves names and checks dimensions.
    pub fn validate(&self) -> Result<Experiment> {
        let model = self.model_spec()?;
        let n = model.dim();
        let observation = self.observation_model(n)?;
        let mean = self.vector("model", "initial_mean", &self.model.initial_mean, n)?;
        let cov = self.square("model", "initial_cov", &self.model.initial_cov, n)?;
        let initial = GaussianDensity::new(mean, cov).map_err(|e| self.err("model", "initial_cov", e.to_string()))?;
        let truth_initial = match &self.model.truth_initial {
            Some(v) => Some(self.vector("model", "truth_initial", v, n)?),
            None => None,
        };
        let f = &self.filter;
        let filter: FilterKind = f.name.parse().map_err(|_| self.err("filter", "name", format!("unknown filter '{}'", f.name)))?;
        if f.m < 2 {
            return Err(self.err("filter", "M", "ensemble needs at least two members"));
        }
        if f.n_substeps == 0 {
            return Err(self.err("filter", "n_substeps", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&f.ess_threshold) {
            return Err(self.err("filter", "ess_threshold", "must be a fraction of M in [0, 1]"));
        }
        let scheme = f.resampling.parse().map_err(|_| self.err("filter", "resampling", format!("unknown scheme '{}'", f.resampling)))?;
        let density = match f.density.as_str() {
            "gaussian" => DensityModel::Gaussian,
            "kernel" => DensityModel::Kernel,
            other => return Err(self.err("filter", "density", format!("unknown density '{other}'"))),
        };
        let forecast = match f.forecast.as_str() {
            "stochastic" => ForecastMode::Stochastic,
            "deterministic" => ForecastMode::Deterministic,
            other => return Err(self.err("filter", "forecast", format!("unknown forecast '{other}'"))),
        };
        if forecast == ForecastMode::Deterministic && filter.is_particle() {
            return Err(self.err("filter", "forecast", "particle filters need a stochastic forecast"));
        }
        let integrator = match f.integrator.as_str() {
            "heun" => FlowIntegrator::Heun,
            "euler" => FlowIntegrator::Euler,
            other => return Err(self.err("filter", "integrator", format!("unknown integrator '{other}'"))),
        };
        let proposal = match f.proposal.as_str() {
            "nudged" => ProposalKind::Nudged,
            "transition" => ProposalKind::Transition,
            other => return Err(self.err("filter", "proposal", format!("unknown proposal '{other}'"))),
        };
        let needs_linear = matches!(filter, FilterKind::Enkf | FilterKind::Esrf | FilterKind::EsrfOt | FilterKind::Etkbf);
        if needs_linear && observation.linear_operator().is_none() {
            return Err(self.err("observation", "h", format!("filter '{filter}' needs a linear operator H")));
        }
        let r = observation.noise_cov();
        if filter == FilterKind::Meanfield && (r - DMatrix::from_diagonal(&r.diagonal())).amax() > 0.0 {
            return Err(self.err("observation", "R", "the mean-field filter needs a diagonal R"));
        }
        let oracle_from_ensemble = match self.run.oracle_initial.as_str() {
            "ensemble" => true,
            "prior" => false,
            other => return Err(self.err("run", "oracle_initial", format!("unknown value '{other}'"))),
        };
        if self.run.oracle && (!model.is_linear() || observation.linear_operator().is_none()) {
            return Err(self.err("run", "oracle", "the Kalman reference needs a linear model and operator"));
        }
        Ok(Experiment {
            model,
            observation,
            initial,
            truth_initial,
            filter,
            ensemble_size: f.m,
            seed: f.seed,
            n_substeps: f.n_substeps,
            ess_fraction: f.ess_threshold,
            scheme,
            bias_correction: f.bias_correction,
            density,
            forecast,
            integrator,
            proposal,
            n_steps: self.run.n_steps,
            oracle: self.run.oracle,
            oracle_from_ensemble,
        })
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line (1-based) of `key = ...` inside `[section]`.
fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
