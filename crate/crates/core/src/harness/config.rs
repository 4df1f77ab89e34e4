//! The declarative run document: data source, protocol, grids, sweep and
//! uncertainty-study settings. Parsed from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{EvalProtocol, Preset};
use super::grid::HyperGrid;
use super::uq::UqStudy;
use crate::bnn::{EnsembleConfig, HeadConfig};
use crate::gpr::GprConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            fractions: (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqSpec {
    #[serde(flatten)]
    pub study: UqStudy,
    pub ensemble: EnsembleConfig,
    /// Training fraction of the single run whose parity data is emitted.
    pub parity_fraction: f64,
    pub head: Option<HeadConfig>,
    pub gpr: Option<GprConfig>,
}

impl Default for UqSpec {
    fn default() -> Self {
        UqSpec {
            study: UqStudy::default(),
            ensemble: EnsembleConfig::default(),
            parity_fraction: 0.8,
            head: None,
            gpr: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub data: DataSource,
    pub protocol: EvalProtocol,
    pub models: Vec<HyperGrid>,
    pub sweep: SweepSpec,
    pub uq: UqSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the preset's iteration counts.
    pub fn resolved(mut self) -> RunConfig {
        if let Some(p) = self.preset {
            self.protocol = self.protocol.with_preset(p);
        }
        self
    }

    /// Replaces every seed the document controls except the study's seed
    /// list.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.protocol.seed = seed;
        self.uq.ensemble.seed = seed;
        if let Some(h) = &mut self.uq.head {
            h.seed = seed;
        }
        if let Some(g) = &mut self.uq.gpr {
            g.seed = seed;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;
    use serde_json::json;

    const DOC: &str = r#"
preset = "ci"

[data.synthetic]
n = 300

[protocol]
k = 3
fractions = { train = 0.7, test = 0.3 }

[[models]]
family = "knn"
axes = { k = [1, 3, 6] }

[[models]]
family = "gbm"
fixed = { n_estimators = 40 }

[sweep]
fractions = [0.2, 0.5]

[uq]
fractions = [0.1, 0.5, 0.8]
draws = 50
ensemble = { epochs = 100 }
"#;

    #[test]
    fn parses_a_full_document() {
        let c = RunConfig::from_toml(DOC).unwrap().resolved();
        assert_eq!(
            (c.protocol.outer_iterations, c.protocol.inner_iterations, c.protocol.k),
            (1, 5, 3)
        );
        assert_eq!(c.protocol.fractions.train, 0.7);
        assert_eq!(c.models.len(), 2);
        assert_eq!(c.models[0].family, Family::Knn);
        assert_eq!(c.models[0].axes["k"], vec![json!(1), json!(3), json!(6)]);
        assert_eq!(c.models[1].fixed["n_estimators"], json!(40));
        assert_eq!(c.data.synthetic.as_ref().unwrap().noise_sigma, 0.05);
        assert_eq!(c.uq.study.draws, 50);
        assert_eq!(c.uq.ensemble.epochs, 100);
        assert_eq!(c.uq.ensemble.hidden_units, 8);
        assert_eq!(c.sweep.fractions, vec![0.2, 0.5]);
    }

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.sweep.fractions.len(), 9);
        assert_eq!(c.uq.study.fractions, vec![0.1, 0.5, 0.8, 0.9, 0.99]);
        let back = RunConfig::from_toml(&RunConfig::from_toml(DOC).unwrap().to_toml().unwrap()).unwrap();
        assert_eq!(back, RunConfig::from_toml(DOC).unwrap());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[[models]]\nfamily = \"lgbm\""),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seed_override() {
        let c = RunConfig::from_toml(DOC).unwrap().with_seed(7);
        assert_eq!((c.protocol.seed, c.uq.ensemble.seed), (7, 7));
    }
}
