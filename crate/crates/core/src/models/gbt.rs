use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, Growth, RegressionTree};
use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::metrics::{Prediction, Regressor};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub learning_rate: f64,
    pub n_estimators: usize,
    /// Best-first growth up to this many leaves.
    pub max_leaf_nodes: Option<usize>,
    /// Level-wise growth to this depth. At most one of the two limits may be
    /// set; with neither, stage trees grow until their leaves are pure.
    pub max_depth: Option<usize>,
    pub subsample: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl GbtConfig {
    /// Gradient boosting machine settings tuned for the DFT data.
    pub fn gbm() -> Self {
        GbtConfig {
            learning_rate: 0.3,
            n_estimators: 120,
            max_leaf_nodes: Some(30),
            max_depth: None,
            subsample: 1.0,
            min_samples_leaf: 1,
            seed: 2022,
        }
    }

    /// Depth-limited, row-subsampled boosting (XGBoost-style settings).
    pub fn xgboost() -> Self {
        GbtConfig {
            learning_rate: 0.1,
            n_estimators: 100,
            max_leaf_nodes: None,
            max_depth: Some(5),
            subsample: 0.9,
            min_samples_leaf: 1,
            seed: 2022,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample {} outside (0, 1]", self.subsample)));
        }
        if self.max_leaf_nodes.is_some() && self.max_depth.is_some() {
            return Err(Error::Config("set at most one of max_leaf_nodes and max_depth".into()));
        }
        if self.max_leaf_nodes.is_some_and(|l| l < 2) || self.max_depth == Some(0) {
            return Err(Error::Config("tree size limit too small".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig::gbm()
    }
}

/// Stagewise additive model `F_m = F_{m-1} + lr · tree_m` on squared loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBoostedTrees {
    init: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
    n_features: usize,
    /// Training RMSE after each stage (index 0 is the constant model).
    pub train_loss: Vec<f64>,
}

impl GradientBoostedTrees {
    pub fn n_stages(&self) -> usize {
        self.trees.len()
    }

    /// Predictions using only the first `stages` trees.
    pub fn predict_staged(&self, x: &Matrix, stages: usize) -> Vec<f64> {
        (0..x.rows())
            .map(|i| {
                self.init
                    + self.learning_rate
                        * self.trees[..stages.min(self.trees.len())]
                            .iter()
                            .map(|t| t.predict_row(x.row(i)))
                            .sum::<f64>()
            })
            .collect()
    }
}

pub fn fit_gbt(train: &DesignMatrix, cfg: &GbtConfig) -> Result<GradientBoostedTrees> {
    cfg.validate()?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Empty("boosting training set"));
    }
    let x = train.features();
    let y = train.targets();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut f = vec![init; n];
    let growth = Growth {
        max_depth: cfg.max_depth,
        max_leaf_nodes: cfg.max_leaf_nodes,
        min_samples_leaf: cfg.min_samples_leaf,
        max_features: None,
        criterion: Criterion::SquaredError,
    };
    let loss = |f: &[f64]| (f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64).sqrt();
    let mut train_loss = vec![loss(&f)];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let n_sub = ((cfg.subsample * n as f64).floor() as usize).clamp(1, n);
    for stage in 0..cfg.n_estimators {
        let residual: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let idx: Vec<usize> = if n_sub < n {
            let mut r = rng::stream(cfg.seed, &[stage as u64]);
            let mut s = sample(&mut r, n, n_sub).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let tree = grow(x, &residual, idx, &growth, None);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.predict_row(x.row(i));
        }
        let l = loss(&f);
        if !l.is_finite() {
            return Err(Error::Diverged {
                iteration: stage,
                loss: l,
            });
        }
        train_loss.push(l);
        trees.push(tree);
    }
    Ok(GradientBoostedTrees {
        init,
        learning_rate: cfg.learning_rate,
        trees,
        n_features: x.cols(),
        train_loss,
    })
}

impl Regressor for GradientBoostedTrees {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        if x.cols() != self.n_features {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.n_features,
            });
        }
        Prediction::new(self.predict_staged(x, self.trees.len()))
    }
}
