//! Point-estimate regressors and a tagged configuration enum that dispatches
//! to them.

pub mod forest;
pub mod gbt;
pub mod knn;
pub mod mlp;
pub mod svr;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use forest::{fit_forest, ForestConfig, RandomForest};
pub use gbt::{fit_gbt, GbtConfig, GradientBoostedTrees};
pub use knn::{fit_knn, KnnConfig, KnnModel, Metric};
pub use mlp::{fit_mlp, Activation, Mlp, MlpConfig, Solver};
pub use svr::{fit_svr, Gamma, GammaRule, SolverStatus, SvrConfig, SvrModel};
pub use tree::{fit_tree, Criterion, Node, RegressionTree, TreeConfig};

use crate::data::DesignMatrix;
use crate::metrics::Regressor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Knn,
    Tree,
    Forest,
    Gbm,
    Xgboost,
    Svr,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Knn,
        Family::Tree,
        Family::Forest,
        Family::Gbm,
        Family::Xgboost,
        Family::Svr,
        Family::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Knn => "knn",
            Family::Tree => "tree",
            Family::Forest => "forest",
            Family::Gbm => "gbm",
            Family::Xgboost => "xgboost",
            Family::Svr => "svr",
            Family::Mlp => "mlp",
        }
    }

    /// The tuned configuration used when a grid leaves a parameter unset.
    pub fn default_config(self) -> ModelConfig {
        match self {
            Family::Knn => ModelConfig::Knn(KnnConfig::default()),
            Family::Tree => ModelConfig::Tree(TreeConfig::default()),
            Family::Forest => ModelConfig::Forest(ForestConfig::default()),
            Family::Gbm => ModelConfig::Gbm(GbtConfig::gbm()),
            Family::Xgboost => ModelConfig::Xgboost(GbtConfig::xgboost()),
            Family::Svr => ModelConfig::Svr(SvrConfig::default()),
            Family::Mlp => ModelConfig::Mlp(MlpConfig::default()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Knn(KnnConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
    Gbm(GbtConfig),
    Xgboost(GbtConfig),
    Svr(SvrConfig),
    Mlp(MlpConfig),
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Knn(_) => Family::Knn,
            ModelConfig::Tree(_) => Family::Tree,
            ModelConfig::Forest(_) => Family::Forest,
            ModelConfig::Gbm(_) => Family::Gbm,
            ModelConfig::Xgboost(_) => Family::Xgboost,
            ModelConfig::Svr(_) => Family::Svr,
            ModelConfig::Mlp(_) => Family::Mlp,
        }
    }

    /// Returns a copy with one field overridden. `name` is the field name of
    /// the family's config struct; the value must deserialize into that
    /// field's type.
    pub fn with_param(&self, name: &str, value: &Value) -> Result<ModelConfig> {
        let mut doc = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        let obj = doc.as_object_mut().expect("configs serialize to objects");
        if name == "family" || !obj.contains_key(name) {
            return Err(Error::Config(format!(
                "`{name}` is not a parameter of the {} family",
                self.family()
            )));
        }
        obj.insert(name.to_string(), value.clone());
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("{}.{name} = {value}: {e}", self.family())))
    }

    pub fn with_params<'a, I>(&self, params: I) -> Result<ModelConfig>
    where
        I: IntoIterator<Item = (&'a String, &'a Value)>,
    {
        params
            .into_iter()
            .try_fold(self.clone(), |cfg, (k, v)| cfg.with_param(k, v))
    }

    /// Replaces the seed of seeded families; a no-op for the others.
    pub fn reseeded(&self, seed: u64) -> ModelConfig {
        let mut cfg = self.clone();
        match &mut cfg {
            ModelConfig::Forest(c) => c.seed = seed,
            ModelConfig::Gbm(c) | ModelConfig::Xgboost(c) => c.seed = seed,
            ModelConfig::Mlp(c) => c.seed = seed,
            ModelConfig::Knn(_) | ModelConfig::Tree(_) | ModelConfig::Svr(_) => {}
        }
        cfg
    }

    pub fn fit(&self, train: &DesignMatrix) -> Result<Box<dyn Regressor>> {
        Ok(match self {
            ModelConfig::Knn(c) => Box::new(fit_knn(train, c)?),
            ModelConfig::Tree(c) => Box::new(fit_tree(train, c)?),
            ModelConfig::Forest(c) => Box::new(fit_forest(train, c)?),
            ModelConfig::Gbm(c) | ModelConfig::Xgboost(c) => Box::new(fit_gbt(train, c)?),
            ModelConfig::Svr(c) => {
                let m = fit_svr(train, c)?;
                if let SolverStatus::IterationLimit { kkt_violation } = m.status {
                    log::warn!("svr stopped at the iteration cap with KKT violation {kkt_violation:.3e}");
                }
                Box::new(m)
            }
            ModelConfig::Mlp(c) => Box::new(fit_mlp(train, c)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, generate_synthetic};
    use serde_json::json;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            assert_eq!(f.default_config().family(), f);
        }
        assert!("lgbm".parse::<Family>().is_err());
    }

    #[test]
    fn defaults_follow_the_tuned_table() {
        let ModelConfig::Gbm(g) = Family::Gbm.default_config() else {
            panic!()
        };
        assert_eq!(
            (g.learning_rate, g.n_estimators, g.max_leaf_nodes),
            (0.3, 120, Some(30))
        );
        let ModelConfig::Xgboost(x) = Family::Xgboost.default_config() else {
            panic!()
        };
        assert_eq!((x.max_depth, x.subsample), (Some(5), 0.9));
        let ModelConfig::Knn(k) = Family::Knn.default_config() else {
            panic!()
        };
        assert_eq!(k.k, 6);
    }

    #[test]
    fn with_param_overrides_and_validates() {
        let cfg = Family::Knn.default_config().with_param("k", &json!(3)).unwrap();
        assert_eq!(
            cfg,
            ModelConfig::Knn(KnnConfig {
                k: 3,
                ..KnnConfig::default()
            })
        );
        let cfg = Family::Svr.default_config().with_param("gamma", &json!(0.5)).unwrap();
        let ModelConfig::Svr(s) = cfg else { panic!() };
        assert_eq!(s.gamma, Gamma::Fixed(0.5));
        let cfg = Family::Mlp
            .default_config()
            .with_param("hidden_sizes", &json!([8, 4]))
            .unwrap();
        let ModelConfig::Mlp(m) = cfg else { panic!() };
        assert_eq!(m.hidden_sizes, vec![8, 4]);
        assert!(Family::Knn.default_config().with_param("depth", &json!(3)).is_err());
        assert!(Family::Knn.default_config().with_param("k", &json!("six")).is_err());
        assert!(Family::Knn
            .default_config()
            .with_param("family", &json!("svr"))
            .is_err());
    }

    #[test]
    fn serde_round_trip_is_tagged() {
        let cfg = Family::Xgboost.default_config();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"family\":\"xgboost\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn every_family_fits_and_is_reproducible() {
        let m = encode(&generate_synthetic(80, 0.02, 1).unwrap()).unwrap();
        for f in Family::ALL {
            let cfg = match f.default_config() {
                ModelConfig::Forest(c) => ModelConfig::Forest(ForestConfig { n_estimators: 10, ..c }),
                ModelConfig::Mlp(c) => ModelConfig::Mlp(MlpConfig { max_iter: 100, ..c }),
                c => c,
            };
            let a = cfg.fit(&m).unwrap().predict(m.features()).unwrap();
            let b = cfg.fit(&m).unwrap().predict(m.features()).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }
}
