//! Monte Carlo checks for transport maps and resampling schemes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use assimilate::prob::{linspace, GridDensity1D, GridDensity2D};
use assimilate::resampling::{offspring, ResamplingScheme};
use assimilate::rng::{DefaultRng, RngStream};
use assimilate::transport::{
    discrete_optimal_coupling, gaussian_affine_coupling, gaussian_optimal_map, knothe_rosenblatt_2d,
    squared_distance_cost, CouplingMatrix, KrOrdering,
};
use assimilate::GaussianDensity;

fn rng(label: &str) -> DefaultRng {
    RngStream::new(42, label).rng()
}

fn normal(r: &mut DefaultRng) -> f64 {
    r.sample(rand_distr::StandardNormal)
}

#[test]
fn knothe_rosenblatt_pushforward_matches_target_histogram() {
    let grid = linspace(-6.0, 6.0, 241);
    let src = GridDensity2D::from_fn(grid.clone(), grid.clone(), |a, b| (-0.5 * (a * a + b * b)).exp()).unwrap();
    // Correlated, shifted Gaussian target.
    let rho = 0.6;
    let target = |a: f64, b: f64| {
        let (u, v) = (a - 0.5, b + 0.3);
        (-(u * u - 2.0 * rho * u * v + v * v) / (2.0 * (1.0 - rho * rho))).exp()
    };
    let dst = GridDensity2D::from_fn(grid.clone(), grid.clone(), target).unwrap();
    let map = knothe_rosenblatt_2d(&src, &dst, KrOrdering::FirstThenSecond).unwrap();

    let n = 100_000;
    let bins = 12;
    let (lo, hi) = (-3.5, 3.5);
    let width = (hi - lo) / bins as f64;
    let bin = |v: f64| ((v - lo) / width).floor().clamp(0.0, bins as f64 - 1.0) as usize;
    let mut hist = DMatrix::<f64>::zeros(bins, bins);
    let mut r = rng("kr");
    for _ in 0..n {
        let (a, b) = map.apply(normal(&mut r), normal(&mut r));
        hist[(bin(a), bin(b))] += 1.0 / n as f64;
    }
    // Reference bin masses by fine quadrature of the target, with clamped tails.
    let fine = 400;
    let step = 14.0 / fine as f64;
    let mut expected = DMatrix::<f64>::zeros(bins, bins);
    let mut total = 0.0;
    for i in 0..fine {
        for j in 0..fine {
            let (a, b) = (-7.0 + (i as f64 + 0.5) * step, -7.0 + (j as f64 + 0.5) * step);
            let p = target(a, b);
            expected[(bin(a), bin(b))] += p;
            total += p;
        }
    }
    expected /= total;
    let tv = 0.5 * (&hist - &expected).abs().sum();
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn optimal_gaussian_map_is_cheaper_than_cholesky_coupling() {
    let mut r = rng("gauss");
    let mut spd = |n: usize| {
        let a = DMatrix::from_fn(n, n, |_, _| normal(&mut r));
        (&a * a.transpose() + DMatrix::identity(n, n) * 0.2, DVector::from_fn(n, |_, _| 0.0))
    };
    for k in 0..100 {
        let n = 1 + k % 5;
        let (c1, m1) = spd(n);
        let (c2, m2) = spd(n);
        let g1 = GaussianDensity::new(m1, c1).unwrap();
        let g2 = GaussianDensity::new(m2, c2).unwrap();
        let opt = gaussian_optimal_map(&g1, &g2).unwrap().expected_squared_cost(&g1).unwrap();
        let chol = gaussian_affine_coupling(&g1, &g2).unwrap().expected_squared_cost(&g1).unwrap();
        assert!(opt <= chol + 1e-9, "optimal {opt} > affine {chol}");
    }
}

#[test]
fn covariance_ranking_reverses_cost_ranking() {
    let mut r = rng("ranking");
    let m = 6;
    let xs: Vec<f64> = (0..m).map(|_| normal(&mut r)).collect();
    let ys: Vec<f64> = (0..m).map(|_| normal(&mut r) + 1.0).collect();
    let u = DVector::from_element(m, 1.0 / m as f64);
    let cost = squared_distance_cost(&DMatrix::from_row_slice(1, m, &xs), &DMatrix::from_row_slice(1, m, &ys)).unwrap();
    let cross = |t: &DMatrix<f64>| {
        let (mx, my) = (xs.iter().sum::<f64>() / m as f64, ys.iter().sum::<f64>() / m as f64);
        (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| t[(i, j)] * (xs[i] - mx) * (ys[j] - my))
            .sum::<f64>()
    };
    let mut plans = vec![
        discrete_optimal_coupling(&u, &u, &cost).unwrap(),
        CouplingMatrix::independent(u.clone(), u.clone()).unwrap(),
    ];
    for _ in 0..20 {
        // Random permutation plans.
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let t = DMatrix::from_fn(m, m, |i, j| if perm[i] == j { 1.0 / m as f64 } else { 0.0 });
        plans.push(CouplingMatrix::new(t, u.clone(), u.clone()).unwrap());
    }
    for a in &plans {
        for b in &plans {
            let dc = a.objective(&cost) - b.objective(&cost);
            let dv = cross(a.entries()) - cross(b.entries());
            // E|x - y|^2 = const - 2 cov(x, y) for fixed marginals.
            assert!((dc + 2.0 * dv).abs() < 1e-10);
        }
    }
}

const SKEWED: [f64; 8] = [0.31, 0.02, 0.17, 0.005, 0.095, 0.22, 0.11, 0.07];

fn count_moments(scheme: ResamplingScheme, reps: usize, r: &mut DefaultRng) -> (Vec<f64>, Vec<f64>) {
    let m = SKEWED.len();
    let (mut s1, mut s2) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..reps {
        let off = offspring(scheme, &SKEWED, r).unwrap();
        for (i, &c) in off.counts().iter().enumerate() {
            s1[i] += c as f64;
            s2[i] += (c * c) as f64;
        }
    }
    let mean: Vec<f64> = s1.iter().map(|s| s / reps as f64).collect();
    let var = s2.iter().zip(&mean).map(|(s, mu)| s / reps as f64 - mu * mu).collect();
    (mean, var)
}

#[test]
fn all_schemes_are_unbiased_and_ordered_by_variance() {
    let mut r = rng("variance");
    let reps = 10_000;
    let mut total_var = Vec::new();
    for scheme in [ResamplingScheme::Systematic, ResamplingScheme::Residual, ResamplingScheme::Multinomial] {
        let (mean, var) = count_moments(scheme, reps, &mut r);
        for i in 0..SKEWED.len() {
            let target = 8.0 * SKEWED[i];
            let se = (var[i] / reps as f64).sqrt().max(1e-12);
            assert!((mean[i] - target).abs() <= 3.0 * se + 1e-12, "{scheme} index {i}: {} vs {target}", mean[i]);
        }
        total_var.push(var.iter().sum::<f64>());
    }
    assert!(total_var[0] <= total_var[1] && total_var[1] <= total_var[2], "{total_var:?}");
}

#[test]
fn residual_coupling_moves_less_mass_than_multinomial() {
    let m = SKEWED.len();
    let support: Vec<f64> = (1..=m).map(|k| k as f64).collect();
    let reps = 10_000;
    let mut r = rng("cost");
    let mut expected_cost = |scheme| {
        let mut total = 0.0;
        for _ in 0..reps {
            let off = offspring(scheme, &SKEWED, &mut r).unwrap();
            let plan = off.coupling();
            for l in 0..m {
                for j in 0..m {
                    total += plan[(l, j)] * (support[l] - support[j]).powi(2);
                }
            }
            for l in 0..m {
                assert!((plan.row(l).sum() - 1.0 / m as f64).abs() < 1e-15);
            }
            for j in 0..m {
                assert!((plan.column(j).sum() - off.counts()[j] as f64 / m as f64).abs() < 1e-15);
            }
        }
        total / reps as f64
    };
    let residual = expected_cost(ResamplingScheme::Residual);
    let multinomial = expected_cost(ResamplingScheme::Multinomial);
    assert!(residual < multinomial, "residual {residual}, multinomial {multinomial}");
}

#[test]
fn grid_quantile_of_uniform_is_linear() {
    let u = GridDensity1D::from_fn(0.0, 1.0, 1001, |_| 1.0).unwrap();
    for p in [0.1, 0.25, 0.5, 0.9] {
        assert!((u.quantile(p) - p).abs() < 1e-9);
    }
}
