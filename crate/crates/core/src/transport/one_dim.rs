//! One-dimensional quantile couplings and the Knothe-Rosenblatt
//! rearrangement built from them.

use crate::error::{Error, Result};
use crate::prob::{interp, GridDensity1D, GridDensity2D};

/// Monotone map tabulated on grid nodes; linear in between, constant beyond
/// the ends.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap1D {
    nodes: Vec<f64>,
    images: Vec<f64>,
}

impl GridMap1D {
    pub fn new(nodes: Vec<f64>, images: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(nodes.len(), images.len())?;
        if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("map nodes must be strictly increasing"));
        }
        if images.windows(2).any(|w| w[1] < w[0] - 1e-10) {
            return Err(Error::invalid("map images must be nondecreasing"));
        }
        Ok(GridMap1D { nodes, images })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn apply(&self, x: f64) -> f64 {
        interp(&self.nodes, &self.images, x)
    }
}

/// `T = F_dst⁻¹ ∘ F_src`, tabulated on the source nodes.
pub fn quantile_transport_1d(src: &GridDensity1D, dst: &GridDensity1D) -> Result<GridMap1D> {
    if !dst.positive_interior() {
        return Err(Error::NonInvertibleCdf(
            "target density vanishes inside its support".into(),
        ));
    }
    let images = src.cdf_values().iter().map(|&p| dst.quantile(p)).collect();
    GridMap1D::new(src.nodes().to_vec(), images)
}

/// Which coordinate the rearrangement transports first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KrOrdering {
    /// `T₁(x¹)`, then `T₂(x¹, x²)`.
    #[default]
    FirstThenSecond,
    /// `T₂(x²)`, then `T₁(x², x¹)`.
    SecondThenFirst,
}

/// Triangular map `(x¹, x²) ↦ (T₁(x¹), T₂(x¹, x²))`.
#[derive(Clone, Debug)]
pub struct KnotheRosenblattMap {
    leading: GridMap1D,
    /// One conditional map per source node of the leading coordinate.
    conditional: Vec<GridMap1D>,
    leading_nodes: Vec<f64>,
    ordering: KrOrdering,
}

impl KnotheRosenblattMap {
    pub fn ordering(&self) -> KrOrdering {
        self.ordering
    }

    pub fn leading_map(&self) -> &GridMap1D {
        &self.leading
    }

    pub fn apply(&self, x1: f64, x2: f64) -> (f64, f64) {
        let (a, b) = match self.ordering {
            KrOrdering::FirstThenSecond => (x1, x2),
            KrOrdering::SecondThenFirst => (x2, x1),
        };
        let ta = self.leading.apply(a);
        let nodes = &self.leading_nodes;
        let n = nodes.len();
        let a_c = a.clamp(nodes[0], nodes[n - 1]);
        let k = nodes.partition_point(|&x| x <= a_c).clamp(1, n - 1);
        let t = (a_c - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
        let tb = (1.0 - t) * self.conditional[k - 1].apply(b) + t * self.conditional[k].apply(b);
        match self.ordering {
            KrOrdering::FirstThenSecond => (ta, tb),
            KrOrdering::SecondThenFirst => (tb, ta),
        }
    }
}

pub fn knothe_rosenblatt_2d(
    src: &GridDensity2D,
    dst: &GridDensity2D,
    ordering: KrOrdering,
) -> Result<KnotheRosenblattMap> {
    let (src, dst) = match ordering {
        KrOrdering::FirstThenSecond => (src.clone(), dst.clone()),
        KrOrdering::SecondThenFirst => (src.transpose(), dst.transpose()),
    };
    let leading = quantile_transport_1d(&src.marginal_x1()?, &dst.marginal_x1()?)?;
    let conditional = src
        .x1()
        .iter()
        .zip(leading.images())
        .map(|(&a, &ta)| {
            let from = src.conditional_x2(a)?;
            let to = dst.conditional_x2(ta)?;
            quantile_transport_1d(&from, &to)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnotheRosenblattMap {
        leading,
        conditional,
        leading_nodes: src.x1().to_vec(),
        ordering,
    })
}

/// L²-Wasserstein distance via the quantile coupling.
///
/// Both inverse CDFs are piecewise linear between the merged CDF breakpoints,
/// so two-point Gauss-Legendre on each piece integrates the squared
/// difference exactly.
pub fn wasserstein2_1d(src: &GridDensity1D, dst: &GridDensity1D) -> f64 {
    let mut breaks: Vec<f64> = src
        .cdf_values()
        .iter()
        .chain(dst.cdf_values())
        .copied()
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let g = 0.5 / 3.0_f64.sqrt();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        for p in [mid - g * h, mid + g * h] {
            let d = src.quantile(p) - dst.quantile(p);
            total += 0.5 * h * d * d;
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::linspace;

    fn std_normal_cdf(x: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        Normal::new(0.0, 1.0).unwrap().cdf(x)
    }

    #[test]
    fn identity_when_src_equals_dst() {
        let g = GridDensity1D::gaussian(0.5, 2.0).unwrap();
        let t = quantile_transport_1d(&g, &g).unwrap();
        for (x, y) in t.nodes().iter().zip(t.images()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_to_standard_normal_median() {
        let u = GridDensity1D::from_fn(0.0, 1.0, 1001, |_| 1.0).unwrap();
        let n = GridDensity1D::gaussian_on(0.0, 1.0, 8.0, 4001).unwrap();
        let t = quantile_transport_1d(&u, &n).unwrap();
        assert!(t.apply(0.5).abs() < 1e-9);
        // against the exact inverse CDF at a few points
        for &x in &[0.1, 0.3, 0.8] {
            assert!((std_normal_cdf(t.apply(x)) - x).abs() < 1e-3);
        }
    }

    #[test]
    fn standard_to_shifted_scaled_normal() {
        let src = GridDensity1D::gaussian_on(0.0, 1.0, 8.0, 4001).unwrap();
        let (m, s) = (1.5, 0.7);
        let dst = GridDensity1D::gaussian_on(m, s * s, 8.0, 4001).unwrap();
        let t = quantile_transport_1d(&src, &dst).unwrap();
        for i in 0..=60 {
            let x = -3.0 + 0.1 * i as f64;
            assert!((t.apply(x) - (m + s * x)).abs() < 1e-3, "x = {x}");
        }
    }

    #[test]
    fn gap_in_target_is_rejected() {
        let src = GridDensity1D::gaussian(0.0, 1.0).unwrap();
        let dst = GridDensity1D::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            quantile_transport_1d(&src, &dst),
            Err(Error::NonInvertibleCdf(_))
        ));
    }

    #[test]
    fn wasserstein_examples() {
        let a = GridDensity1D::gaussian_on(0.0, 1.0, 8.0, 2001).unwrap();
        assert!(wasserstein2_1d(&a, &a) < 1e-12);
        let b = GridDensity1D::gaussian_on(2.0, 1.0, 8.0, 2001).unwrap();
        assert!((wasserstein2_1d(&a, &b) - 2.0).abs() < 1e-3);

        // narrow spikes at -1 and 2.5 on a shared grid
        let nodes = linspace(-5.0, 5.0, 1001);
        let h = nodes[1] - nodes[0];
        let spike = |c: f64| {
            let values = nodes.iter().map(|&x| (1.0 - (x - c).abs() / h).max(0.0)).collect();
            GridDensity1D::new(nodes.clone(), values).unwrap()
        };
        let d = wasserstein2_1d(&spike(-1.0), &spike(2.5));
        assert!((d - 3.5).abs() < h);
    }

    #[test]
    fn knothe_rosenblatt_identity_and_product_case() {
        let x = linspace(-9.0, 9.0, 721);
        let prod = |m1: f64, s1: f64, m2: f64, s2: f64| {
            GridDensity2D::from_fn(x.clone(), x.clone(), move |a, b| {
                (-0.5 * ((a - m1) / s1).powi(2) - 0.5 * ((b - m2) / s2).powi(2)).exp()
            })
            .unwrap()
        };
        let g = prod(0.0, 1.0, 0.0, 1.0);
        let id = knothe_rosenblatt_2d(&g, &g, KrOrdering::default()).unwrap();
        for &(a, b) in &[(0.3, -0.7), (-1.5, 1.2), (2.0, 0.0)] {
            let (ta, tb) = id.apply(a, b);
            assert!((ta - a).abs() < 1e-6 && (tb - b).abs() < 1e-6);
        }

        let dst = prod(1.0, 0.5, -1.0, 1.5);
        let kr = knothe_rosenblatt_2d(&g, &dst, KrOrdering::FirstThenSecond).unwrap();
        let kr_rev = knothe_rosenblatt_2d(&g, &dst, KrOrdering::SecondThenFirst).unwrap();
        let m1 = quantile_transport_1d(
            &GridDensity1D::new(x.clone(), x.iter().map(|a| (-0.5 * a * a).exp()).collect()).unwrap(),
            &GridDensity1D::new(x.clone(), x.iter().map(|a| (-2.0 * (a - 1.0).powi(2)).exp()).collect())
                .unwrap(),
        )
        .unwrap();
        for &(a, b) in &[(0.3, -0.7), (-1.5, 1.2)] {
            let (ta, tb) = kr.apply(a, b);
            assert!((ta - m1.apply(a)).abs() < 1e-9);
            assert!((ta - (1.0 + 0.5 * a)).abs() < 1e-3);
            assert!((tb - (-1.0 + 1.5 * b)).abs() < 1e-3);
            let (ra, rb) = kr_rev.apply(a, b);
            assert!((ra - ta).abs() < 1e-3 && (rb - tb).abs() < 1e-3);
        }
    }
}
