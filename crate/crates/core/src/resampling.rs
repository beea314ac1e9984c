//! Resampling: turning a weighted ensemble into an equally weighted one.
//!
//! All three schemes draw member indices through the generalised inverse CDF
//! of the weights, with right-closed intervals `(W_{i-1}, W_i]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::prob::{compensated_cumsum, WeightedEnsemble};

/// Default trigger: resample when the ESS drops below this fraction of `M`.
pub const DEFAULT_ESS_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResamplingScheme {
    Multinomial,
    #[default]
    Residual,
    Systematic,
}

impl FromStr for ResamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "residual" => Ok(Self::Residual),
            "systematic" => Ok(Self::Systematic),
            other => Err(Error::config(format!("unknown resampling scheme '{other}'"))),
        }
    }
}

impl fmt::Display for ResamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Multinomial => "multinomial",
            Self::Residual => "residual",
            Self::Systematic => "systematic",
        })
    }
}

/// Number of copies `ξ_i` of each member; sums to `M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffspringVector {
    counts: Vec<usize>,
}

impl OffspringVector {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.iter().sum::<usize>() != counts.len() {
            return Err(Error::invalid("offspring counts must sum to the ensemble size"));
        }
        Ok(OffspringVector { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Parent index of each output slot, in nondecreasing order.
    pub fn parents(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(i).take(c))
            .collect()
    }

    /// Coupling induced by the resampling step: rows are the equally weighted
    /// output slots, columns the weighted input members, `t_lj = 1/M` when
    /// slot `l` copies member `j`.
    pub fn coupling(&self) -> DMatrix<f64> {
        let m = self.counts.len();
        let mut t = DMatrix::zeros(m, m);
        for (l, j) in self.parents().into_iter().enumerate() {
            t[(l, j)] = 1.0 / m as f64;
        }
        t
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    crate::prob::validate_weights(weights)
}

/// `I_l = min { i : W_i ≥ u_l }` (0-based), skipping zero-weight members.
pub fn inverse_cdf_indices(weights: &[f64], uniforms: &[f64]) -> Result<Vec<usize>> {
    check_weights(weights)?;
    if uniforms.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::invalid("uniform variates must lie in [0, 1]"));
    }
    let cum = compensated_cumsum(weights);
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    Ok(uniforms
        .iter()
        .map(|&u| {
            let mut k = cum.partition_point(|&c| c < u);
            while k < last_positive && weights[k] == 0.0 {
                k += 1;
            }
            k.min(last_positive)
        })
        .collect())
}

fn counts_from_indices(m: usize, indices: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; m];
    for &i in indices {
        counts[i] += 1;
    }
    counts
}

/// `trials` independent draws from `Mult(weights)`.
pub fn multinomial_counts<R: Rng + ?Sized>(weights: &[f64], trials: usize, rng: &mut R) -> Result<Vec<usize>> {
    let uniforms: Vec<f64> = (0..trials).map(|_| rng.gen::<f64>()).collect();
    let idx = inverse_cdf_indices(weights, &uniforms)?;
    Ok(counts_from_indices(weights.len(), &idx))
}

pub fn multinomial_offspring<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<OffspringVector> {
    OffspringVector::new(multinomial_counts(weights, weights.len(), rng)?)
}

/// `ξ_i = ⌊M w_i⌋ + ξ̄_i` with `ξ̄` multinomial over the residual weights.
pub fn residual_offspring<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<OffspringVector> {
    check_weights(weights)?;
    let m = weights.len();
    let mf = m as f64;
    let mut floors = Vec::with_capacity(m);
    let mut residual = Vec::with_capacity(m);
    for &w in weights {
        let scaled = mf * w;
        let mut f = scaled.floor();
        // M * (1/M) may round to just below an integer
        if scaled - f > 1.0 - 1e-9 {
            f += 1.0;
        }
        floors.push(f as usize);
        residual.push((scaled - f).max(0.0));
    }
    let assigned: usize = floors.iter().sum();
    let remaining = m - assigned;
    let mut counts = floors;
    if remaining > 0 {
        let total: f64 = residual.iter().sum();
        let normalised: Vec<f64> = if total > 0.0 {
            residual.iter().map(|r| r / total).collect()
        } else {
            weights.to_vec()
        };
        let extra = multinomial_counts(&renormalise(normalised), remaining, rng)?;
        for (c, e) in counts.iter_mut().zip(extra) {
            *c += e;
        }
    }
    OffspringVector::new(counts)
}

fn renormalise(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Indices for the stratified points `(l + v)/M`, `l = 0..M-1`, `v ∈ (0, 1]`.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Result<Vec<usize>> {
    if !(offset > 0.0 && offset <= 1.0) {
        return Err(Error::invalid("systematic offset must lie in (0, 1]"));
    }
    let m = weights.len() as f64;
    let uniforms: Vec<f64> = (0..weights.len())
        .map(|l| ((l as f64 + offset) / m).min(1.0))
        .collect();
    inverse_cdf_indices(weights, &uniforms)
}

pub fn systematic_offspring<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<OffspringVector> {
    let offset = 1.0 - rng.gen::<f64>();
    let idx = systematic_indices(weights, offset)?;
    OffspringVector::new(counts_from_indices(weights.len(), &idx))
}

pub fn offspring<R: Rng + ?Sized>(
    scheme: ResamplingScheme,
    weights: &[f64],
    rng: &mut R,
) -> Result<OffspringVector> {
    match scheme {
        ResamplingScheme::Multinomial => multinomial_offspring(weights, rng),
        ResamplingScheme::Residual => residual_offspring(weights, rng),
        ResamplingScheme::Systematic => systematic_offspring(weights, rng),
    }
}

/// Equally weighted ensemble holding `ξ_i` copies of member `i`.
pub fn apply_offspring(e: &WeightedEnsemble, offspring: &OffspringVector) -> Result<WeightedEnsemble> {
    crate::error::check_dim(e.size(), offspring.counts().len())?;
    let cols: Vec<DVector<f64>> = offspring.parents().into_iter().map(|i| e.member(i)).collect();
    WeightedEnsemble::from_columns(&cols)
}

pub fn resample<R: Rng + ?Sized>(
    scheme: ResamplingScheme,
    e: &WeightedEnsemble,
    rng: &mut R,
) -> Result<(WeightedEnsemble, OffspringVector)> {
    let off = offspring(scheme, e.weights().as_slice(), rng)?;
    Ok((apply_offspring(e, &off)?, off))
}

pub fn multinomial_resample<R: Rng + ?Sized>(e: &WeightedEnsemble, rng: &mut R) -> Result<(WeightedEnsemble, OffspringVector)> {
    resample(ResamplingScheme::Multinomial, e, rng)
}

pub fn residual_resample<R: Rng + ?Sized>(e: &WeightedEnsemble, rng: &mut R) -> Result<(WeightedEnsemble, OffspringVector)> {
    resample(ResamplingScheme::Residual, e, rng)
}

pub fn systematic_resample<R: Rng + ?Sized>(e: &WeightedEnsemble, rng: &mut R) -> Result<(WeightedEnsemble, OffspringVector)> {
    resample(ResamplingScheme::Systematic, e, rng)
}

/// `1 / Σ w_i²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn uniform(m: usize) -> Vec<f64> {
        vec![1.0 / m as f64; m]
    }

    #[test]
    fn inverse_cdf_examples() {
        assert_eq!(inverse_cdf_indices(&[1.0, 0.0, 0.0], &[0.0, 0.4, 1.0]).unwrap(), vec![0, 0, 0]);
        let half = [0.5, 0.5];
        assert_eq!(inverse_cdf_indices(&half, &[0.5]).unwrap(), vec![0]);
        assert_eq!(inverse_cdf_indices(&half, &[0.5 + 1e-12]).unwrap(), vec![1]);
        let m = 7;
        let mids: Vec<f64> = (1..=m).map(|l| (l as f64 - 0.5) / m as f64).collect();
        assert_eq!(inverse_cdf_indices(&uniform(m), &mids).unwrap(), (0..m).collect::<Vec<_>>());
        // zero-weight leading member is never selected, even at u = 0
        assert_eq!(inverse_cdf_indices(&[0.0, 1.0], &[0.0]).unwrap(), vec![1]);
    }

    #[test]
    fn inverse_cdf_rejects_out_of_range() {
        assert!(inverse_cdf_indices(&[0.5, 0.5], &[1.5]).is_err());
        assert!(inverse_cdf_indices(&[0.5, 0.5], &[-0.1]).is_err());
        assert!(inverse_cdf_indices(&[0.5, 0.6], &[0.1]).is_err());
    }

    #[test]
    fn degenerate_weights_copy_one_member() {
        let mut rng = RngStream::new(1, "t").rng();
        let mut w = vec![0.0; 6];
        w[5] = 1.0;
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Residual, ResamplingScheme::Systematic] {
            let off = offspring(scheme, &w, &mut rng).unwrap();
            assert_eq!(off.counts(), &[0, 0, 0, 0, 0, 6]);
        }
        let mut first = vec![0.0; 4];
        first[0] = 1.0;
        let off = systematic_offspring(&first, &mut rng).unwrap();
        assert_eq!(off.counts(), &[4, 0, 0, 0]);
    }

    #[test]
    fn residual_examples() {
        let mut rng = RngStream::new(2, "t").rng();
        for m in [3, 10, 49, 100] {
            let off = residual_offspring(&uniform(m), &mut rng).unwrap();
            assert!(off.counts().iter().all(|&c| c == 1), "M = {m}");
        }
        let off = residual_offspring(&[0.5, 0.5, 0.0, 0.0], &mut rng).unwrap();
        assert_eq!(off.counts(), &[2, 2, 0, 0]);
        let w = [0.37, 0.13, 0.3, 0.2];
        for _ in 0..100 {
            let off = residual_offspring(&w, &mut rng).unwrap();
            for (c, wi) in off.counts().iter().zip(w) {
                assert!(*c >= (4.0 * wi).floor() as usize);
            }
        }
    }

    #[test]
    fn systematic_uniform_is_identity_for_any_offset() {
        for m in [1, 5, 49, 64] {
            for v in [1e-12, 0.3, 0.5, 0.999_999] {
                let idx = systematic_indices(&uniform(m), v).unwrap();
                assert_eq!(idx, (0..m).collect::<Vec<_>>(), "M = {m}, v = {v}");
            }
        }
    }

    #[test]
    fn counts_always_sum_to_m() {
        let mut rng = RngStream::new(3, "t").rng();
        let w = [0.05, 0.4, 0.01, 0.24, 0.3];
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Residual, ResamplingScheme::Systematic] {
            for _ in 0..50 {
                assert_eq!(offspring(scheme, &w, &mut rng).unwrap().counts().iter().sum::<usize>(), 5);
            }
        }
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&uniform(8)) - 8.0).abs() < 1e-12);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(effective_sample_size(&[0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn resampled_ensemble_has_uniform_weights() {
        let e = WeightedEnsemble::new(
            DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
            DVector::from_vec(vec![0.1, 0.1, 0.8]),
        )
        .unwrap();
        let mut rng = RngStream::new(4, "t").rng();
        let (r, off) = residual_resample(&e, &mut rng).unwrap();
        assert!(r.is_uniform());
        assert!(off.counts()[2] >= 2);
        let t = off.coupling();
        assert!((t.column_sum() - DVector::from_element(3, 1.0 / 3.0)).amax() < 1e-15);
    }

    #[test]
    fn scheme_names() {
        assert_eq!("residual".parse::<ResamplingScheme>().unwrap(), ResamplingScheme::Residual);
        assert_eq!(ResamplingScheme::Systematic.to_string(), "systematic");
        assert!("stratified".parse::<ResamplingScheme>().is_err());
        assert_eq!(ResamplingScheme::default(), ResamplingScheme::Residual);
    }
}
