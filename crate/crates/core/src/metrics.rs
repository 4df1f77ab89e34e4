//! Regressor contracts, RMSE and parity tables.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Point predictions (mm), one per query row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub values: Vec<f64>,
}

impl Prediction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("prediction contains non-finite values".into()));
        }
        Ok(Prediction { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-query Gaussian predictive mean and standard deviation (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn new(means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        if means.len() != stddevs.len() {
            return Err(Error::LengthMismatch {
                left: means.len(),
                right: stddevs.len(),
            });
        }
        if means.iter().chain(&stddevs).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("predictive distribution is not finite".into()));
        }
        if stddevs.iter().any(|s| *s < 0.0) {
            return Err(Error::Numerical("negative predictive stddev".into()));
        }
        Ok(PredictiveDistribution { means, stddevs })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// A fitted point-estimate model. Models receive already encoded and
/// scaled features and never own preprocessing.
pub trait Regressor: Send + Sync {
    fn predict(&self, x: &Matrix) -> Result<Prediction>;
}

/// A fitted model that also reports predictive uncertainty.
pub trait ProbabilisticRegressor: Regressor {
    fn predict_dist(&self, x: &Matrix) -> Result<PredictiveDistribution>;
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("rmse of empty vectors"));
    }
    let sse: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// Root sum of squares of process repeatability and measurement uncertainty.
pub fn combined_noise_floor(repeatability: f64, measurement_uncertainty: f64) -> f64 {
    repeatability.hypot(measurement_uncertainty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub measured: f64,
    pub predicted: f64,
    pub aleatoric: Option<f64>,
    pub epistemic: Option<f64>,
}

/// Measured vs predicted values (mm) with optional uncertainty columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityTable {
    pub rows: Vec<ParityRow>,
}

pub const PARITY_HEADER: [&str; 4] = ["measured_mm", "predicted_mm", "aleatoric_mm", "epistemic_mm"];

pub fn parity_table(
    measured: &[f64],
    predicted: &[f64],
    aleatoric: Option<&[f64]>,
    epistemic: Option<&[f64]>,
) -> Result<ParityTable> {
    let n = measured.len();
    for other in [Some(predicted), aleatoric, epistemic].into_iter().flatten() {
        if other.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: other.len(),
            });
        }
    }
    let all = measured
        .iter()
        .chain(predicted)
        .chain(aleatoric.unwrap_or(&[]))
        .chain(epistemic.unwrap_or(&[]));
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("parity table values must be finite".into()));
    }
    let rows = (0..n)
        .map(|i| ParityRow {
            measured: measured[i],
            predicted: predicted[i],
            aleatoric: aleatoric.map(|a| a[i]),
            epistemic: epistemic.map(|e| e[i]),
        })
        .collect();
    Ok(ParityTable { rows })
}

impl ParityTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with header `measured_mm,predicted_mm,aleatoric_mm,epistemic_mm`;
    /// absent uncertainty columns are left empty.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(PARITY_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.measured.to_string(),
                r.predicted.to_string(),
                opt(r.aleatoric),
                opt(r.epistemic),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[0.0, 0.0], &[0.03, 0.04]).unwrap();
        assert!((r - (0.0025f64 / 2.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.035355).abs() < 1e-6);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn noise_floor_examples() {
        assert!((combined_noise_floor(0.047, 0.015) - 0.049336).abs() < 1e-5);
        assert_eq!(combined_noise_floor(0.0, 0.02), 0.02);
        assert!((combined_noise_floor(0.03, 0.04) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn parity_tables() {
        let t = parity_table(&[1.0, 2.0, 3.0], &[1.1, 1.9, 3.2], None, None).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.rows.iter().all(|r| r.aleatoric.is_none()));
        let t = parity_table(&[1.0, 2.0], &[1.1, 1.9], Some(&[0.1, 0.2]), None).unwrap();
        assert_eq!(t.rows[1].aleatoric, Some(0.2));
        assert_eq!(
            t.to_csv_string(),
            "measured_mm,predicted_mm,aleatoric_mm,epistemic_mm\n1,1.1,0.1,\n2,1.9,0.2,\n"
        );
        assert!(parity_table(&[1.0, 2.0], &[1.0], None, None).is_err());
        assert!(parity_table(&[1.0], &[1.0], Some(&[0.1, 0.2]), None).is_err());
    }

    proptest! {
        #[test]
        fn rmse_symmetry_and_shift(
            pairs in proptest::collection::vec((-10f64..10.0, -10f64..10.0), 1..50),
            shift in -5f64..5.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = rmse(&a, &b).unwrap();
            prop_assert!((r - rmse(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
            let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
            prop_assert!((r - rmse(&a2, &b2).unwrap()).abs() < 1e-9);
            let mut perm: Vec<usize> = (0..a.len()).collect();
            perm.reverse();
            let ap: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
            let bp: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
            prop_assert!((r - rmse(&ap, &bp).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn noise_floor_is_monotone(r in 0f64..1.0, u in 0f64..1.0, dr in 0f64..1.0, du in 0f64..1.0) {
            let base = combined_noise_floor(r, u);
            prop_assert!(combined_noise_floor(r + dr, u) >= base);
            prop_assert!(combined_noise_floor(r, u + du) >= base);
        }
    }
}
