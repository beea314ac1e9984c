//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use assimilate::filters::{
    esrf_optimal_transform, esrf_transform, etkb_filter_step_with, kalman_bucy_moments, kalman_update,
    meanfield_transform_step, etkb_filter_step, DensityModel, FlowIntegrator, KalmanBucyMode,
};
use assimilate::harness::{run_experiment, ExperimentConfig};
use assimilate::linalg::symmetrize;
use assimilate::models::{ModelSpec, ObservationModel};
use assimilate::prob::{linspace, GaussianDensity, GridDensity1D, WeightedEnsemble};
use assimilate::resampling::{offspring, systematic_indices, ResamplingScheme};
use assimilate::rng::{standard_normal_vector, DefaultRng, RngStream};
use assimilate::samplers::{chain_standard_error, hmc_chain, mala_chain, BayesLinearProblem, TargetDensity, DEFAULT_STEP_SIZE};
use assimilate::transport::{discrete_optimal_coupling, gaussian_optimal_map, squared_distance_cost, wasserstein2_1d};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(label: &str) -> DefaultRng {
    RngStream::new(20_241_019, label).rng()
}

fn random_spd(rng: &mut DefaultRng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    symmetrize(&(&a * a.transpose() + DMatrix::identity(n, n) * floor))
}

fn random_gaussian(rng: &mut DefaultRng, n: usize) -> GaussianDensity {
    GaussianDensity::new(standard_normal_vector(rng, n), random_spd(rng, n, 0.2)).unwrap()
}

fn random_matrix(rng: &mut DefaultRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn random_ensemble(rng: &mut DefaultRng, n: usize, m: usize) -> WeightedEnsemble {
    WeightedEnsemble::uniform(random_matrix(rng, n, m)).unwrap()
}

fn empirical(e: &WeightedEnsemble) -> GaussianDensity {
    GaussianDensity::new(e.mean(), e.cov().unwrap()).unwrap()
}

fn linear_config(filter: &str, m: usize, n_steps: usize, q: f64, oracle: bool) -> ExperimentConfig {
    let text = format!(
        r#"
[model]
name = "linear"
dt = 0.1
A = [[-0.2, 1.0], [-1.0, -0.2]]
Q = [[{q}, 0.0], [0.0, {q}]]
initial_mean = [1.0, 0.0]
initial_cov = [[1.0, 0.3], [0.3, 0.8]]

[observation]
H = [[1.0, 0.0]]
R = [[1.0]]

[filter]
name = "{filter}"
M = {m}
seed = 7

[run]
n_steps = {n_steps}
oracle = {oracle}
"#
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

/// 1. Square-root filter against the exact Kalman recursion.
fn kalman_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = linear_config("esrf", 20, 50, 0.0, true);
    let out = run_experiment(&cfg.validate().unwrap()).unwrap();
    let elapsed = start.elapsed();
    let mean_gap = out.metrics.max_oracle_gap().unwrap();
    let cov_gap = out.metrics.max_oracle_cov_gap().unwrap();
    let pass = out.metrics.steps.len() == 50 && mean_gap <= 1e-8 && cov_gap <= 1e-8 && elapsed < Duration::from_secs(1);
    outcome(pass, format!("max mean gap {mean_gap:.2e}, max cov gap {cov_gap:.2e}, {:.3} s", elapsed.as_secs_f64()))
}

/// 2. D-fold tempered updates equal one Kalman update.
fn incremental_bayes_identity() -> Outcome {
    let mut r = rng("incremental");
    let mut worst = 0.0_f64;
    for dim in [1usize, 2] {
        for _ in 0..100 {
            let prior = random_gaussian(&mut r, dim);
            let h = random_matrix(&mut r, dim, dim);
            let noise = random_spd(&mut r, dim, 0.1);
            let y = standard_normal_vector(&mut r, dim);
            let exact = kalman_update(&prior, &h, &noise, &y).unwrap();
            for d in [1usize, 2, 4, 8, 16, 32, 64] {
                let g = kalman_bucy_moments(&prior, &h, &noise, &y, d, KalmanBucyMode::Discrete).unwrap();
                worst = worst
                    .max((g.mean() - exact.mean()).amax())
                    .max((g.cov() - exact.cov()).amax());
            }
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e} over 200 instances x 7 values of D"))
}

/// 3. First-order convergence of the ensemble Kalman-Bucy flow.
fn kalman_bucy_convergence() -> Outcome {
    let mut r = rng("etkbf");
    let e = random_ensemble(&mut r, 2, 20);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let noise = DMatrix::from_element(1, 1, 1.0);
    let y = DVector::from_element(1, 3.0);
    let exact = kalman_update(&empirical(&e), &h, &noise, &y).unwrap();
    let err = |n: usize, integ| {
        let p = etkb_filter_step_with(&e, &h, &noise, &y, n, integ).unwrap();
        (p.mean() - exact.mean()).amax().max((p.cov().unwrap() - exact.cov()).amax())
    };
    let eu: Vec<f64> = [20, 40, 80].iter().map(|&n| err(n, FlowIntegrator::Euler)).collect();
    let he: Vec<f64> = [20, 40, 80].iter().map(|&n| err(n, FlowIntegrator::Heun)).collect();
    let re = [eu[0] / eu[1], eu[1] / eu[2]];
    let rh = [he[0] / he[1], he[1] / he[2]];
    let halves = re.iter().all(|q| (q - 2.0).abs() <= 0.4);
    let order_heun = rh.iter().all(|q| *q >= 1.6);
    outcome(
        halves && order_heun,
        format!(
            "Euler ratios {:.3}, {:.3} (target 2 +/- 20%); Heun ratios {:.3}, {:.3} (order >= 1)",
            re[0], re[1], rh[0], rh[1]
        ),
    )
}

/// Random orthogonal matrix with `Q 1 = 1`.
fn mean_preserving_orthogonal(r: &mut DefaultRng, m: usize) -> DMatrix<f64> {
    let mut basis = random_matrix(r, m, m);
    basis.set_column(0, &DVector::from_element(m, 1.0));
    let u = basis.qr().q();
    let inner = random_matrix(r, m - 1, m - 1).qr().q();
    let mut block = DMatrix::identity(m, m);
    block.view_mut((1, 1), (m - 1, m - 1)).copy_from(&inner);
    &u * block * u.transpose()
}

/// 4. Optimality of S_OT among mean-preserving rotations of S.
fn optimal_transform() -> Outcome {
    let mut r = rng("sot");
    let (n, m) = (3, 10);
    let mut violations = 0usize;
    let mut strict = 0usize;
    let mut cov_gap = 0.0_f64;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..50 {
        let e = random_ensemble(&mut r, n, m);
        let h = random_matrix(&mut r, 2, n);
        let noise = random_spd(&mut r, 2, 0.2);
        let s = esrf_transform(&e, &h, &noise).unwrap();
        let sot = esrf_optimal_transform(&e, &h, &noise).unwrap();
        let dx = e.deviations();
        let corr = |t: &DMatrix<f64>| (&dx * t.transpose() * dx.transpose()).trace() / (m - 1) as f64;
        let best = corr(sot.entries());
        let post = |t: &DMatrix<f64>| &dx * t * t.transpose() * dx.transpose() / (m - 1) as f64;
        cov_gap = cov_gap.max((post(sot.entries()) - post(s.entries())).amax());
        let mut any_strict = false;
        for _ in 0..100 {
            let q = mean_preserving_orthogonal(&mut r, m);
            let other = corr(&(s.entries() * q));
            worst_margin = worst_margin.min(best - other);
            if other > best + 1e-10 {
                violations += 1;
            }
            if best > other + 1e-8 {
                any_strict = true;
            }
        }
        strict += usize::from(any_strict);
    }
    let pass = violations == 0 && strict == 50 && cov_gap <= 1e-8;
    outcome(
        pass,
        format!("violations {violations}/5000, ensembles with a strict gap {strict}/50, min margin {worst_margin:.2e}, cov gap {cov_gap:.2e}"),
    )
}

/// 5. Perturbed-observation EnKF and SIR against the Kalman mean.
fn monte_carlo_consistency() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for filter in ["enkf", "sir"] {
        let cfg = linear_config(filter, 10_000, 20, 0.1, true);
        let out = run_experiment(&cfg.validate().unwrap()).unwrap();
        let gap = out.metrics.max_oracle_gap().unwrap();
        // observation std is 1
        pass &= gap <= 0.05;
        details.push(format!("{filter} max |mean - kalman| {gap:.4}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    outcome(pass, format!("{}, {:.2} s", details.join(", "), elapsed.as_secs_f64()))
}

/// 6. Resampling unbiasedness and deterministic cases.
fn resampling_statistics() -> Outcome {
    let m = 8;
    let w = [0.31, 0.02, 0.17, 0.005, 0.095, 0.22, 0.11, 0.07];
    let reps = 10_000;
    let mut r = rng("resampling");
    let mut worst_z = 0.0_f64;
    let mut floors_ok = true;
    for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Residual, ResamplingScheme::Systematic] {
        let mut sum = [0.0; 8];
        let mut sq = [0.0; 8];
        for _ in 0..reps {
            let off = offspring(scheme, &w, &mut r).unwrap();
            for (i, &c) in off.counts().iter().enumerate() {
                sum[i] += c as f64;
                sq[i] += (c * c) as f64;
                if scheme == ResamplingScheme::Residual && c < (m as f64 * w[i]).floor() as usize {
                    floors_ok = false;
                }
            }
        }
        for i in 0..m {
            let mean = sum[i] / reps as f64;
            let var = (sq[i] / reps as f64 - mean * mean).max(0.0);
            let se = (var / reps as f64).sqrt();
            let dev = (mean - m as f64 * w[i]).abs();
            let z = if se > 0.0 { dev / se } else if dev < 1e-12 { 0.0 } else { f64::INFINITY };
            worst_z = worst_z.max(z);
        }
    }
    let uniform = vec![1.0 / m as f64; m];
    let mut identity = true;
    for _ in 0..1000 {
        let res = offspring(ResamplingScheme::Residual, &uniform, &mut r).unwrap();
        let sys = offspring(ResamplingScheme::Systematic, &uniform, &mut r).unwrap();
        identity &= res.counts().iter().all(|&c| c == 1) && sys.counts().iter().all(|&c| c == 1);
    }
    for v in [1e-12, 0.25, 0.5, 0.75, 0.999_999] {
        identity &= systematic_indices(&uniform, v).unwrap() == (0..m).collect::<Vec<_>>();
    }
    outcome(
        worst_z <= 3.0 && floors_ok && identity,
        format!("max |E[xi] - Mw| / se = {worst_z:.2}, residual floors {floors_ok}, uniform identity {identity}"),
    )
}

/// 7. Pure diffusion: variance grows at rate 2.
fn heat_equation_scaling() -> Outcome {
    let dt = 0.01;
    let model = ModelSpec::linear(DMatrix::zeros(1, 1), DVector::zeros(1), DMatrix::identity(1, 1), dt).unwrap();
    let mut e = WeightedEnsemble::uniform(DMatrix::zeros(1, 100_000)).unwrap();
    let stream = RngStream::new(3, "heat");
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for step in 1..=100u64 {
        e = model.propagate(&e, &stream, step).unwrap();
        ts.push(step as f64 * dt);
        vs.push(e.cov().unwrap()[(0, 0)]);
    }
    let n = ts.len() as f64;
    let (mt, mv) = (ts.iter().sum::<f64>() / n, vs.iter().sum::<f64>() / n);
    let slope = ts.iter().zip(&vs).map(|(t, v)| (t - mt) * (v - mv)).sum::<f64>()
        / ts.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
    outcome((slope - 2.0).abs() <= 0.06, format!("fitted slope {slope:.4}"))
}

/// 8. Deterministic ensemble ODE against the covariance equation.
fn inflation_ode() -> Outcome {
    let dt = 1e-3;
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -0.5]);
    let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
    let model = ModelSpec::linear(a.clone(), DVector::zeros(2), q.clone(), dt).unwrap();
    let mut r = rng("inflation");
    let mut e = WeightedEnsemble::uniform(random_matrix(&mut r, 2, 1000) * 0.5).unwrap();
    let mut p = e.cov().unwrap();
    let rhs = |p: &DMatrix<f64>| &a * p + p * a.transpose() + &q * 2.0;
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        e = model.deterministic_ensemble_step(&e).unwrap();
        // RK4 on dP/dt = A P + P Aᵀ + 2Q
        let k1 = rhs(&p);
        let k2 = rhs(&(&p + &k1 * (dt / 2.0)));
        let k3 = rhs(&(&p + &k2 * (dt / 2.0)));
        let k4 = rhs(&(&p + &k3 * dt));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let rel = (e.cov().unwrap() - &p).norm() / p.norm();
        worst = worst.max(rel);
    }
    outcome(worst <= 0.01, format!("max relative covariance error {worst:.2e} over t in [0, 1]"))
}

/// Monotone (north-west corner) plan for sorted supports.
fn monotone_plan(a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    let mut t = DMatrix::zeros(a.len(), b.len());
    while i < a.len() && j < b.len() {
        let mass = ra.min(rb);
        t[(i, j)] += mass;
        ra -= mass;
        rb -= mass;
        if ra <= rb {
            i += 1;
            if i < a.len() {
                ra = a[i];
            }
        } else {
            j += 1;
            if j < b.len() {
                rb = b[j];
            }
        }
    }
    t
}

fn random_simplex(r: &mut DefaultRng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// 9. Discrete LP, 1D Wasserstein distance and Gaussian optimal maps.
fn transport_correctness() -> Outcome {
    let mut r = rng("transport");
    let mut lp_gap = 0.0_f64;
    for _ in 0..20 {
        let mut xs: Vec<f64> = (0..15).map(|_| r.gen_range(-3.0..3.0)).collect();
        let mut ys: Vec<f64> = (0..12).map(|_| r.gen_range(-2.0..4.0)).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let (wx, wy) = (random_simplex(&mut r, 15), random_simplex(&mut r, 12));
        let cost = squared_distance_cost(&DMatrix::from_row_slice(1, 15, &xs), &DMatrix::from_row_slice(1, 12, &ys)).unwrap();
        let plan = discrete_optimal_coupling(&DVector::from_vec(wx.clone()), &DVector::from_vec(wy.clone()), &cost).unwrap();
        lp_gap = lp_gap.max((plan.entries() - monotone_plan(&wx, &wy)).amax());
    }
    let nodes = linspace(-12.0, 14.0, 20_001);
    let g0 = GridDensity1D::new(nodes.clone(), nodes.iter().map(|x| (-0.5 * x * x).exp()).collect()).unwrap();
    let g2 = GridDensity1D::new(nodes.clone(), nodes.iter().map(|x| (-0.5 * (x - 2.0).powi(2)).exp()).collect()).unwrap();
    let w2 = wasserstein2_1d(&g0, &g2);
    let mut push = 0.0_f64;
    for _ in 0..100 {
        let a = random_gaussian(&mut r, 3);
        let b = random_gaussian(&mut r, 3);
        let map = gaussian_optimal_map(&a, &b).unwrap();
        let image = map.pushforward(&a).unwrap();
        push = push.max((image.cov() - b.cov()).amax()).max((image.mean() - b.mean()).amax());
    }
    let pass = lp_gap <= 1e-12 && (w2 - 2.0).abs() <= 1e-3 && push <= 1e-10;
    outcome(pass, format!("LP vs monotone plan {lp_gap:.1e}, W2 = {w2:.6}, pushforward error {push:.1e}"))
}

/// 10. Gaussian mean-field flow equals the ensemble Kalman-Bucy flow.
fn meanfield_equivalence() -> Outcome {
    let mut r = rng("meanfield");
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let e = random_ensemble(&mut r, 3, 20);
        let h = random_matrix(&mut r, 1, 3);
        let noise = DMatrix::from_element(1, 1, r.gen_range(0.2..2.0));
        let y = standard_normal_vector(&mut r, 1);
        let o = ObservationModel::linear(h.clone(), noise.clone()).unwrap();
        let a = meanfield_transform_step(&e, &o, &y, 20, DensityModel::Gaussian).unwrap();
        let b = etkb_filter_step(&e, &h, &noise, &y, 20).unwrap();
        worst = worst.max((a.members() - b.members()).amax());
    }
    outcome(worst <= 1e-8, format!("max member difference {worst:.2e} over 20 ensembles"))
}

/// 11. MALA and HMC on a conjugate posterior.
fn sampler_validity() -> Outcome {
    let problem = BayesLinearProblem::standard();
    let exact = problem.posterior().unwrap();
    let t = TargetDensity::bayes_linear(&problem).unwrap();
    let x0 = DVector::zeros(2);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, l) in [("MALA", 1usize), ("HMC", 5)] {
        let mut r = rng(name);
        let chain = if l == 1 {
            mala_chain(&t, &x0, DEFAULT_STEP_SIZE, 100_000, &mut r).unwrap()
        } else {
            hmc_chain(&t, &x0, DEFAULT_STEP_SIZE, l, 100_000, &mut r).unwrap()
        };
        let kept = chain.default_samples();
        let mut worst_z = 0.0_f64;
        for k in 0..2 {
            let series: Vec<f64> = kept.row(k).iter().copied().collect();
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            worst_z = worst_z.max((mean - exact.mean()[k]).abs() / chain_standard_error(&series));
        }
        pass &= worst_z <= 3.0 && chain.acceptance_rate >= 0.6;
        details.push(format!("{name} acceptance {:.3}, max |z| {worst_z:.2}", chain.acceptance_rate));
    }
    outcome(pass, details.join("; "))
}

/// 12. Lorenz-63 twin experiment with the square-root filter.
fn lorenz_smoke() -> Outcome {
    let start = Instant::now();
    let text = r#"
[model]
name = "lorenz63"
dt = 0.01
Q = [[0.05, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.05]]
initial_mean = [-5.9, -5.5, 24.5]
initial_cov = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]

[observation]
H = [[1.0, 0.0, 0.0]]
R = [[1.0]]
interval = 10

[filter]
name = "esrf"
M = 50
seed = 11

[run]
n_steps = 2000
"#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    let out = run_experiment(&cfg.validate().unwrap()).unwrap();
    let elapsed = start.elapsed();
    let rmse = out.metrics.mean_analysis_rmse();
    outcome(
        rmse < 1.0 && elapsed < Duration::from_secs(60),
        format!("time-mean analysis RMSE {rmse:.4} (obs std 1), {:.2} s", elapsed.as_secs_f64()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("kalman oracle equivalence", kalman_oracle_equivalence),
        ("incremental bayes identity", incremental_bayes_identity),
        ("kalman-bucy flow convergence", kalman_bucy_convergence),
        ("optimal transform optimality", optimal_transform),
        ("monte carlo consistency", monte_carlo_consistency),
        ("resampling statistics", resampling_statistics),
        ("heat equation scaling", heat_equation_scaling),
        ("inflation ode moments", inflation_ode),
        ("transport correctness", transport_correctness),
        ("mean-field / etkbf equivalence", meanfield_equivalence),
        ("sampler validity", sampler_validity),
        ("lorenz-63 smoke test", lorenz_smoke),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!("{} [{:2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
