use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::metrics::{Prediction, Regressor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 6,
            metric: Metric::Euclidean,
        }
    }
}

/// Brute-force k-nearest-neighbour regressor (unweighted mean of the k
/// nearest targets; equal distances resolve to the lower training index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    cfg: KnnConfig,
    x: Matrix,
    y: Vec<f64>,
}

pub fn fit_knn(train: &DesignMatrix, cfg: &KnnConfig) -> Result<KnnModel> {
    if cfg.k == 0 {
        return Err(Error::Config("knn k must be >= 1".into()));
    }
    if cfg.k > train.n_rows() {
        return Err(Error::Config(format!(
            "knn k = {} exceeds the {} training rows",
            cfg.k,
            train.n_rows()
        )));
    }
    Ok(KnnModel {
        cfg: cfg.clone(),
        x: train.features().clone(),
        y: train.targets().to_vec(),
    })
}

impl KnnModel {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.cfg.metric {
            // squared distance preserves the neighbour ordering
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }

    /// Indices of the k nearest training rows, nearest first.
    pub fn neighbours(&self, query: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = (0..self.x.rows())
            .map(|i| (self.distance(self.x.row(i), query), i))
            .collect();
        let k = self.cfg.k;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

impl Regressor for KnnModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        if x.cols() != self.x.cols() {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.x.cols(),
            });
        }
        let values = (0..x.rows())
            .map(|i| {
                let nn = self.neighbours(x.row(i));
                nn.iter().map(|&j| self.y[j]).sum::<f64>() / nn.len() as f64
            })
            .collect();
        Prediction::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_d(xs: &[f64], ys: &[f64]) -> DesignMatrix {
        DesignMatrix::from_continuous(Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap(), ys.to_vec()).unwrap()
    }

    #[test]
    fn k1_recovers_training_target() {
        let m = one_d(&[0.0, 1.0, 2.0], &[0.3, -0.2, 0.9]);
        let model = fit_knn(
            &m,
            &KnnConfig {
                k: 1,
                metric: Metric::Euclidean,
            },
        )
        .unwrap();
        assert_eq!(model.predict(m.features()).unwrap().values, vec![0.3, -0.2, 0.9]);
    }

    #[test]
    fn k2_averages_two_nearest() {
        let m = one_d(&[-1.0, 1.0, 10.0], &[0.0, 0.1, 5.0]);
        let model = fit_knn(
            &m,
            &KnnConfig {
                k: 2,
                metric: Metric::Euclidean,
            },
        )
        .unwrap();
        let p = model.predict(&Matrix::from_vec(1, 1, vec![0.0]).unwrap()).unwrap();
        assert!((p.values[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let m = one_d(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(matches!(
            fit_knn(
                &m,
                &KnnConfig {
                    k: 3,
                    metric: Metric::Euclidean
                }
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn equal_distances_prefer_lower_index() {
        let m = one_d(&[-1.0, 1.0, 3.0], &[0.0, 1.0, 2.0]);
        let model = fit_knn(
            &m,
            &KnnConfig {
                k: 1,
                metric: Metric::Manhattan,
            },
        )
        .unwrap();
        assert_eq!(model.neighbours(&[0.0]), vec![0]);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_sort(
            pts in proptest::collection::vec((-5.0f64..5.0, -1.0f64..1.0), 5..10),
            q in -6.0f64..6.0,
            k in 1usize..5,
            manhattan in any::<bool>(),
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let metric = if manhattan { Metric::Manhattan } else { Metric::Euclidean };
            let model = fit_knn(&one_d(&xs, &ys), &KnnConfig { k, metric }).unwrap();
            let mut order: Vec<usize> = (0..xs.len()).collect();
            order.sort_by(|&a, &b| (xs[a] - q).abs().total_cmp(&(xs[b] - q).abs()).then(a.cmp(&b)));
            let expected: f64 = order[..k].iter().map(|&i| ys[i]).sum::<f64>() / k as f64;
            let got = model.predict(&Matrix::from_vec(1, 1, vec![q]).unwrap()).unwrap().values[0];
            prop_assert!((got - expected).abs() < 1e-12);
        }

        #[test]
        fn k_equal_n_predicts_global_mean(
            pts in proptest::collection::vec((-5.0f64..5.0, -1.0f64..1.0), 1..12),
            q in -6.0f64..6.0,
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let model = fit_knn(&one_d(&xs, &ys), &KnnConfig { k: xs.len(), metric: Metric::Euclidean }).unwrap();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let got = model.predict(&Matrix::from_vec(1, 1, vec![q]).unwrap()).unwrap().values[0];
            prop_assert!((got - mean).abs() < 1e-12);
        }
    }
}
