use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, Growth, RegressionTree};
use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::metrics::{Prediction, Regressor};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Candidate features drawn per split; `None` considers all of them.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` grows trees until `min_samples_leaf` or purity stops them.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 300,
            max_features: Some(3),
            min_samples_leaf: 3,
            max_depth: None,
            bootstrap: true,
            seed: 2022,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }
}

/// Bagged CART trees with per-split feature subsampling. Tree `t` draws its
/// bootstrap sample and feature subsets from the stream `(seed, t)`, so the
/// fit is independent of how trees are scheduled across threads.
pub fn fit_forest(train: &DesignMatrix, cfg: &ForestConfig) -> Result<RandomForest> {
    if cfg.n_estimators == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    if cfg.min_samples_leaf == 0 {
        return Err(Error::Config("forest min_samples_leaf must be >= 1".into()));
    }
    if let Some(k) = cfg.max_features {
        if k == 0 || k > train.width() {
            return Err(Error::Config(format!(
                "forest max_features = {k} must lie in 1..={}",
                train.width()
            )));
        }
    }
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Empty("forest training set"));
    }
    let growth = Growth {
        max_depth: cfg.max_depth,
        max_leaf_nodes: None,
        min_samples_leaf: cfg.min_samples_leaf,
        max_features: cfg.max_features,
        criterion: Criterion::SquaredError,
    };
    let trees = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(cfg.seed, &[t as u64]);
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(train.features(), train.targets(), idx, &growth, Some(&mut r))
        })
        .collect();
    Ok(RandomForest { trees })
}

impl Regressor for RandomForest {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        self.trees[0].check_width(x)?;
        let m = self.trees.len() as f64;
        let values = (0..x.rows())
            .map(|i| self.trees.iter().map(|t| t.predict_row(x.row(i))).sum::<f64>() / m)
            .collect();
        Prediction::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, fit_scaler, generate_synthetic, ScalerMethod};
    use crate::metrics::rmse;
    use crate::models::tree::{fit_tree, TreeConfig};

    fn synthetic(n: usize, seed: u64) -> DesignMatrix {
        let m = encode(&generate_synthetic(n, 0.05, seed).unwrap()).unwrap();
        fit_scaler(&m, ScalerMethod::Zscore).unwrap().apply(&m).unwrap()
    }

    #[test]
    fn single_unbootstrapped_tree_equals_cart() {
        let m = synthetic(120, 1);
        let cfg = ForestConfig {
            n_estimators: 1,
            max_features: None,
            min_samples_leaf: 3,
            max_depth: None,
            bootstrap: false,
            seed: 9,
        };
        let forest = fit_forest(&m, &cfg).unwrap();
        let tree = fit_tree(
            &m,
            &TreeConfig {
                max_depth: None,
                min_samples_leaf: 3,
                criterion: Criterion::SquaredError,
            },
        )
        .unwrap();
        assert_eq!(
            forest.predict(m.features()).unwrap(),
            tree.predict(m.features()).unwrap()
        );
    }

    #[test]
    fn same_seed_same_forest() {
        let m = synthetic(150, 2);
        let cfg = ForestConfig {
            n_estimators: 20,
            ..Default::default()
        };
        let a = fit_forest(&m, &cfg).unwrap().predict(m.features()).unwrap();
        let b = fit_forest(&m, &cfg).unwrap().predict(m.features()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_beats_single_tree_on_fixture() {
        let all = synthetic(600, 3);
        let train = all.select_rows(&(0..450).collect::<Vec<_>>());
        let test = all.select_rows(&(450..600).collect::<Vec<_>>());
        let tree_cfg = TreeConfig {
            max_depth: None,
            min_samples_leaf: 1,
            criterion: Criterion::SquaredError,
        };
        let tree = fit_tree(&train, &tree_cfg).unwrap();
        let forest = fit_forest(
            &train,
            &ForestConfig {
                n_estimators: 50,
                max_features: Some(8),
                min_samples_leaf: 1,
                max_depth: None,
                bootstrap: true,
                seed: 5,
            },
        )
        .unwrap();
        let rt = rmse(&tree.predict(test.features()).unwrap().values, test.targets()).unwrap();
        let rf = rmse(&forest.predict(test.features()).unwrap().values, test.targets()).unwrap();
        assert!(rf <= rt, "forest {rf} vs tree {rt}");
    }

    #[test]
    fn rejects_too_many_features() {
        let m = synthetic(20, 4);
        let cfg = ForestConfig {
            max_features: Some(17),
            ..Default::default()
        };
        assert!(fit_forest(&m, &cfg).is_err());
    }
}
