use serde::{Deserialize, Serialize};

use super::encode::DesignMatrix;
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerMethod {
    #[default]
    Zscore,
    Minmax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ColumnScale {
    /// Indicator columns and everything under `ScalerMethod::None`.
    Passthrough,
    /// `(x - mean) / std`; constant columns keep `std = 1` and are flagged.
    Zscore { mean: f64, std: f64, constant: bool },
    /// `(x - min) / (max - min)`; constant columns use a unit range.
    Minmax { min: f64, max: f64, constant: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub method: ScalerMethod,
    labels: Vec<String>,
    scales: Vec<ColumnScale>,
}

impl ScalerState {
    pub fn scales(&self) -> &[ColumnScale] {
        &self.scales
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Labels of continuous columns that were constant on the fitted rows.
    pub fn constant_columns(&self) -> Vec<&str> {
        self.labels
            .iter()
            .zip(&self.scales)
            .filter(|(_, s)| {
                matches!(
                    s,
                    ColumnScale::Zscore { constant: true, .. } | ColumnScale::Minmax { constant: true, .. }
                )
            })
            .map(|(l, _)| l.as_str())
            .collect()
    }

    fn check_layout(&self, m: &DesignMatrix) -> Result<()> {
        let labels = m.column_labels();
        if labels != self.labels {
            return Err(Error::LayoutMismatch(format!(
                "scaler fitted on columns {:?}, applied to {:?}",
                self.labels, labels
            )));
        }
        Ok(())
    }

    pub fn apply(&self, m: &DesignMatrix) -> Result<DesignMatrix> {
        self.check_layout(m)?;
        Ok(m.with_features(self.transform(m.features(), false)))
    }

    pub fn invert(&self, m: &DesignMatrix) -> Result<DesignMatrix> {
        self.check_layout(m)?;
        Ok(m.with_features(self.transform(m.features(), true)))
    }

    /// Scales a bare feature matrix whose columns follow the fitted layout.
    pub fn apply_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.scales.len() {
            return Err(Error::LayoutMismatch(format!(
                "scaler fitted on {} columns, applied to {}",
                self.scales.len(),
                x.cols()
            )));
        }
        Ok(self.transform(x, false))
    }

    fn transform(&self, x: &Matrix, inverse: bool) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (v, s) in out.row_mut(i).iter_mut().zip(&self.scales) {
                *v = match (*s, inverse) {
                    (ColumnScale::Passthrough, _) => *v,
                    (ColumnScale::Zscore { mean, std, .. }, false) => (*v - mean) / std,
                    (ColumnScale::Zscore { mean, std, .. }, true) => *v * std + mean,
                    (ColumnScale::Minmax { min, max, constant }, false) => {
                        let range = if constant { 1.0 } else { max - min };
                        (*v - min) / range
                    }
                    (ColumnScale::Minmax { min, max, constant }, true) => {
                        let range = if constant { 1.0 } else { max - min };
                        *v * range + min
                    }
                };
            }
        }
        out
    }
}

/// Fits per-column statistics on the continuous columns of `m`. Indicator
/// columns and targets are never scaled. Uses the population standard
/// deviation.
pub fn fit_scaler(m: &DesignMatrix, method: ScalerMethod) -> Result<ScalerState> {
    if m.n_rows() == 0 {
        return Err(Error::Empty("cannot fit a scaler on zero rows"));
    }
    let n = m.n_rows() as f64;
    let scales = m
        .columns()
        .iter()
        .enumerate()
        .map(|(j, col)| {
            if !col.is_continuous() {
                return ColumnScale::Passthrough;
            }
            let values = m.features().column(j);
            match method {
                ScalerMethod::None => ColumnScale::Passthrough,
                ScalerMethod::Zscore => {
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt();
                    if std > 0.0 && std > 1e-12 * mean.abs() {
                        ColumnScale::Zscore {
                            mean,
                            std,
                            constant: false,
                        }
                    } else {
                        ColumnScale::Zscore {
                            mean,
                            std: 1.0,
                            constant: true,
                        }
                    }
                }
                ScalerMethod::Minmax => {
                    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    ColumnScale::Minmax {
                        min,
                        max,
                        constant: max <= min,
                    }
                }
            }
        })
        .collect();
    Ok(ScalerState {
        method,
        labels: m.column_labels(),
        scales,
    })
}
