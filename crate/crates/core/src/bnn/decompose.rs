//! Ensemble outputs and their aleatoric/epistemic decomposition.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-draw predictive means and stddevs (mm), draw-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    means: Vec<Vec<f64>>,
    stddevs: Vec<Vec<f64>>,
    pub seed: u64,
}

impl EnsembleOutput {
    pub fn new(means: Vec<Vec<f64>>, stddevs: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs at least 2 draws, got {}",
                means.len()
            )));
        }
        if stddevs.len() != means.len() {
            return Err(Error::LengthMismatch {
                left: means.len(),
                right: stddevs.len(),
            });
        }
        let q = means[0].len();
        for (m, s) in means.iter().zip(&stddevs) {
            if m.len() != q || s.len() != q {
                return Err(Error::LengthMismatch {
                    left: m.len().max(s.len()),
                    right: q,
                });
            }
            if m.iter().any(|v| !v.is_finite()) || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Numerical(
                    "ensemble draw has non-finite mean or non-positive stddev".into(),
                ));
            }
        }
        Ok(EnsembleOutput { means, stddevs, seed })
    }

    pub fn n_draws(&self) -> usize {
        self.means.len()
    }

    pub fn n_queries(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stddevs(&self) -> &[Vec<f64>] {
        &self.stddevs
    }

    /// Mean of the equally weighted Gaussian mixture at each query.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let n = self.n_draws() as f64;
        (0..self.n_queries())
            .map(|q| self.means.iter().map(|m| m[q]).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateUncertainty {
    pub aleatoric: f64,
    pub epistemic: f64,
    /// `sqrt(aleatoric² + epistemic²)` of the two aggregates.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDecomposition {
    pub mean: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub total: Vec<f64>,
    /// Means over queries.
    pub aggregate: AggregateUncertainty,
}

/// Per query: aleatoric is the root mean of the draw variances, epistemic
/// the sample stddev (divisor N−1) of the draw means.
pub fn decompose_uncertainty(ensemble: &EnsembleOutput) -> Result<UncertaintyDecomposition> {
    let n = ensemble.n_draws();
    if n < 2 {
        return Err(Error::Config("uncertainty decomposition needs at least 2 draws".into()));
    }
    let nf = n as f64;
    let mean = ensemble.mixture_mean();
    let q = ensemble.n_queries();
    let mut aleatoric = Vec::with_capacity(q);
    let mut epistemic = Vec::with_capacity(q);
    let mut total = Vec::with_capacity(q);
    for j in 0..q {
        let a = (ensemble.stddevs.iter().map(|s| s[j] * s[j]).sum::<f64>() / nf).sqrt();
        // Shifted by the first draw so identical draws give exactly zero.
        let first = ensemble.means[0][j];
        let (s1, s2) = ensemble.means.iter().fold((0.0, 0.0), |(a, b), m| {
            let d = m[j] - first;
            (a + d, b + d * d)
        });
        let e = ((s2 - s1 * s1 / nf).max(0.0) / (nf - 1.0)).sqrt();
        aleatoric.push(a);
        epistemic.push(e);
        total.push(a.hypot(e));
    }
    let avg = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let (agg_a, agg_e) = (avg(&aleatoric), avg(&epistemic));
    Ok(UncertaintyDecomposition {
        mean,
        aleatoric,
        epistemic,
        total,
        aggregate: AggregateUncertainty {
            aleatoric: agg_a,
            epistemic: agg_e,
            total: agg_a.hypot(agg_e),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_draw_hand_example() {
        let out = EnsembleOutput::new(vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![2.0]], 0).unwrap();
        let d = decompose_uncertainty(&out).unwrap();
        assert!((d.aleatoric[0] - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((d.epistemic[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((d.aleatoric[0] - 1.58114).abs() < 5e-6);
    }

    #[test]
    fn degenerate_spreads() {
        let out = EnsembleOutput::new(vec![vec![0.3, 0.1]; 4], vec![vec![0.05, 0.05]; 4], 0).unwrap();
        let d = decompose_uncertainty(&out).unwrap();
        assert_eq!(d.epistemic, vec![0.0, 0.0]);
        assert!(d.aleatoric.iter().all(|a| (a - 0.05).abs() < 1e-12));
        assert!(EnsembleOutput::new(vec![vec![0.0]], vec![vec![1.0]], 0).is_err());
        assert!(EnsembleOutput::new(vec![vec![0.0]; 2], vec![vec![0.0]; 2], 0).is_err());
    }

    #[test]
    fn mixture_mean_matches_numerical_integration() {
        let means = vec![vec![-0.4], vec![0.1], vec![0.9]];
        let stds = vec![vec![0.3], vec![0.5], vec![0.2]];
        let out = EnsembleOutput::new(means.clone(), stds.clone(), 0).unwrap();
        let pdf = |x: f64| -> f64 {
            means
                .iter()
                .zip(&stds)
                .map(|(m, s)| {
                    (-(x - m[0]).powi(2) / (2.0 * s[0] * s[0])).exp() / (s[0] * (2.0 * std::f64::consts::PI).sqrt())
                })
                .sum::<f64>()
                / 3.0
        };
        let (lo, hi, steps) = (-6.0, 6.0, 120_000);
        let h = (hi - lo) / steps as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * pdf(x) * h;
            first += w * x * pdf(x) * h;
        }
        assert!((mass - 1.0).abs() < 1e-9);
        assert!((first - out.mixture_mean()[0]).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn total_is_the_quadrature_sum(
            draws in prop::collection::vec(prop::collection::vec((-1.0f64..1.0, 0.01f64..1.0), 3), 2..10),
        ) {
            let means: Vec<Vec<f64>> = draws.iter().map(|d| d.iter().map(|p| p.0).collect()).collect();
            let stds: Vec<Vec<f64>> = draws.iter().map(|d| d.iter().map(|p| p.1).collect()).collect();
            let dec = decompose_uncertainty(&EnsembleOutput::new(means, stds, 0).unwrap()).unwrap();
            for ((a, e), t) in dec.aleatoric.iter().zip(&dec.epistemic).zip(&dec.total) {
                prop_assert!(*a >= 0.0 && *e >= 0.0);
                prop_assert!((t * t - (a * a + e * e)).abs() <= 1e-12 * (1.0 + t * t));
            }
        }
    }
}
