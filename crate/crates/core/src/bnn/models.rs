//! The two Bayesian network regressors.
//!
//! * [`HeadModel`]: deterministic dense layers with batch norm and a
//!   Gaussian output head; captures aleatoric uncertainty only.
//! * [`EnsembleModel`]: batch-normalised inputs feeding a mean-field
//!   variational layer, a deterministic output layer and a Gaussian head.
//!   Sampling its weights yields an ensemble of networks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decompose::EnsembleOutput;
use super::loss::positive_scale;
use super::network::{LayerKind, Mode, Network, Noise};
use super::train::{train, EpochLoss, Objective, OptimizerKind, TrainSpec};
use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::metrics::{Prediction, PredictiveDistribution, ProbabilisticRegressor, Regressor};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    /// Minibatch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Penalise the divergence of the predicted output distribution from a
    /// standard normal.
    pub output_kl: bool,
    /// Defaults to `1 / n_train`.
    pub kl_weight: Option<f64>,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden_sizes: vec![24, 16, 8],
            epochs: 500,
            batch_size: Some(32),
            learning_rate: 1e-3,
            output_kl: true,
            kl_weight: None,
            seed: 2022,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Defaults to `1 / n_train`.
    pub kl_weight: Option<f64>,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            hidden_units: 8,
            epochs: 1000,
            batch_size: Some(32),
            learning_rate: 1e-3,
            kl_weight: None,
            seed: 2022,
        }
    }
}

fn resolve_kl_weight(kl_weight: Option<f64>, n: usize) -> Result<f64> {
    let w = kl_weight.unwrap_or(1.0 / n as f64);
    if !(w >= 0.0) || !w.is_finite() {
        return Err(Error::Config(format!("kl_weight must be finite and >= 0, got {w}")));
    }
    Ok(w)
}

fn head_outputs(net: &Network, params: &[f64], x: &Matrix, noise: &Noise) -> Result<(Vec<f64>, Vec<f64>)> {
    let pass = net.forward(params, x, Mode::Infer, noise)?;
    let out = pass.output();
    let n = x.rows();
    let means: Vec<f64> = (0..n).map(|r| out[2 * r]).collect();
    let stds: Vec<f64> = (0..n).map(|r| positive_scale(out[2 * r + 1])).collect();
    Ok((means, stds))
}

#[derive(Debug, Clone)]
pub struct HeadModel {
    pub(crate) net: Network,
    pub(crate) params: Vec<f64>,
    pub(crate) kl_weight: f64,
    pub trace: Vec<EpochLoss>,
}

impl HeadModel {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn kl_weight(&self) -> f64 {
        self.kl_weight
    }
}

pub fn head_architecture(inputs: usize, hidden: &[usize]) -> Result<Network> {
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::Config("hidden_sizes must be nonempty and positive".into()));
    }
    let mut kinds = Vec::new();
    let mut width = inputs;
    for &h in hidden {
        kinds.push(LayerKind::Dense {
            inputs: width,
            outputs: h,
        });
        kinds.push(LayerKind::BatchNorm { dim: h });
        kinds.push(LayerKind::Relu);
        width = h;
    }
    kinds.push(LayerKind::Dense {
        inputs: width,
        outputs: 2,
    });
    Network::new(inputs, &kinds)
}

pub fn ensemble_architecture(inputs: usize, hidden_units: usize) -> Result<Network> {
    if hidden_units == 0 {
        return Err(Error::Config("hidden_units must be positive".into()));
    }
    Network::new(
        inputs,
        &[
            LayerKind::BatchNorm { dim: inputs },
            LayerKind::Variational {
                inputs,
                outputs: hidden_units,
            },
            LayerKind::Sigmoid,
            LayerKind::Dense {
                inputs: hidden_units,
                outputs: 2,
            },
        ],
    )
}

/// Trains the Gaussian-head network with Adam on the NLL plus the optional
/// output-distribution penalty. Deterministic given `cfg.seed`.
pub fn train_head_model(train_set: &DesignMatrix, cfg: &HeadConfig) -> Result<HeadModel> {
    if train_set.n_rows() == 0 {
        return Err(Error::Empty("bnn training set"));
    }
    let mut net = head_architecture(train_set.width(), &cfg.hidden_sizes)?;
    let kl_weight = resolve_kl_weight(cfg.kl_weight, train_set.n_rows())?;
    let mut params = net.init_params(&mut rng::stream(cfg.seed, &[0]));
    let spec = TrainSpec {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: OptimizerKind::Adam,
        objective: Objective {
            kl_weight,
            output_kl: cfg.output_kl,
        },
    };
    let trace = train(
        &mut net,
        &mut params,
        train_set,
        &spec,
        &mut rng::stream(cfg.seed, &[1]),
    )?;
    Ok(HeadModel {
        net,
        params,
        kl_weight,
        trace,
    })
}

impl Regressor for HeadModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        Prediction::new(head_outputs(&self.net, &self.params, x, &self.net.zero_noise())?.0)
    }
}

impl ProbabilisticRegressor for HeadModel {
    fn predict_dist(&self, x: &Matrix) -> Result<PredictiveDistribution> {
        let (m, s) = head_outputs(&self.net, &self.params, x, &self.net.zero_noise())?;
        PredictiveDistribution::new(m, s)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub(crate) net: Network,
    pub(crate) params: Vec<f64>,
    pub(crate) kl_weight: f64,
    /// Multiplies every sampled weight perturbation; 0 collapses the
    /// posterior onto its means.
    pub(crate) posterior_scale: f64,
    pub trace: Vec<EpochLoss>,
}

/// Trains the variational network with RMSprop on the ELBO. Deterministic
/// given `cfg.seed`.
pub fn train_ensemble_model(train_set: &DesignMatrix, cfg: &EnsembleConfig) -> Result<EnsembleModel> {
    if train_set.n_rows() == 0 {
        return Err(Error::Empty("bnn training set"));
    }
    let mut net = ensemble_architecture(train_set.width(), cfg.hidden_units)?;
    let kl_weight = resolve_kl_weight(cfg.kl_weight, train_set.n_rows())?;
    let mut params = net.init_params(&mut rng::stream(cfg.seed, &[0]));
    let spec = TrainSpec {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: OptimizerKind::RmsProp,
        objective: Objective {
            kl_weight,
            output_kl: false,
        },
    };
    let trace = train(
        &mut net,
        &mut params,
        train_set,
        &spec,
        &mut rng::stream(cfg.seed, &[1]),
    )?;
    Ok(EnsembleModel {
        net,
        params,
        kl_weight,
        posterior_scale: 1.0,
        trace,
    })
}

impl EnsembleModel {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn kl_weight(&self) -> f64 {
        self.kl_weight
    }

    pub fn variational_means(&self) -> Vec<f64> {
        self.net
            .variational_ranges()
            .into_iter()
            .flat_map(|(mu, _)| self.params[mu].to_vec())
            .collect()
    }

    pub fn variational_stddevs(&self) -> Vec<f64> {
        self.net
            .variational_ranges()
            .into_iter()
            .flat_map(|(_, rho)| self.params[rho].iter().map(|&r| positive_scale(r)).collect::<Vec<_>>())
            .collect()
    }

    /// A copy whose draws all use the posterior means.
    pub fn with_collapsed_posterior(&self) -> EnsembleModel {
        EnsembleModel {
            posterior_scale: 0.0,
            ..self.clone()
        }
    }

    /// One network sampled from the posterior with the stream `(seed, draw)`.
    pub fn predict_draw(&self, x: &Matrix, seed: u64, draw: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut noise = self.net.sample_noise(&mut rng::stream(seed, &[draw]));
        for v in noise.0.iter_mut().flatten() {
            *v *= self.posterior_scale;
        }
        head_outputs(&self.net, &self.params, x, &noise)
    }
}

/// Samples `n_draws` networks from the posterior and records each one's
/// predictive mean and stddev per query, in inference mode. Draw `d` uses
/// the stream `(seed, d)`, so results do not depend on scheduling.
pub fn ensemble_predict(model: &EnsembleModel, x: &Matrix, n_draws: usize, seed: u64) -> Result<EnsembleOutput> {
    if n_draws < 2 {
        return Err(Error::Config(format!(
            "ensemble prediction needs at least 2 draws, got {n_draws}"
        )));
    }
    let draws = (0..n_draws as u64)
        .into_par_iter()
        .map(|d| model.predict_draw(x, seed, d))
        .collect::<Result<Vec<_>>>()?;
    let (means, stddevs): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
    EnsembleOutput::new(means, stddevs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::decompose_uncertainty;
    use crate::bnn::network::INIT_POSTERIOR_STD;
    use crate::data::{encode, fit_scaler, generate_synthetic, ScalerMethod};

    fn fixture(n: usize, sigma: f64, seed: u64) -> DesignMatrix {
        let m = encode(&generate_synthetic(n, sigma, seed).unwrap()).unwrap();
        fit_scaler(&m, ScalerMethod::Zscore).unwrap().apply(&m).unwrap()
    }

    #[test]
    fn ensemble_parameter_count_is_twice_the_dense_layer() {
        let net = ensemble_architecture(16, 8).unwrap();
        let (mu, rho) = net.variational_ranges().remove(0);
        assert_eq!(mu.len() + rho.len(), 2 * (16 * 8 + 8));
    }

    #[test]
    fn head_model_recovers_known_noise() {
        let data = fixture(2000, 0.05, 21);
        let model = train_head_model(&data, &HeadConfig::default()).unwrap();
        let dist = model.predict_dist(data.features()).unwrap();
        let mean_std = dist.stddevs.iter().sum::<f64>() / dist.len() as f64;
        assert!((0.04..=0.06).contains(&mean_std), "mean predicted stddev {mean_std}");
        assert_eq!(model.trace.len(), 500);
    }

    #[test]
    fn training_is_deterministic() {
        let data = fixture(120, 0.05, 2);
        let cfg = EnsembleConfig {
            epochs: 20,
            ..EnsembleConfig::default()
        };
        let a = train_ensemble_model(&data, &cfg).unwrap();
        let b = train_ensemble_model(&data, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        let hc = HeadConfig {
            epochs: 5,
            ..HeadConfig::default()
        };
        assert_eq!(
            train_head_model(&data, &hc).unwrap().params(),
            train_head_model(&data, &hc).unwrap().params()
        );
    }

    #[test]
    fn heavy_kl_weight_collapses_to_the_prior() {
        let data = fixture(200, 0.05, 3);
        let cfg = EnsembleConfig {
            epochs: 200,
            kl_weight: Some(1e6),
            ..EnsembleConfig::default()
        };
        let m = train_ensemble_model(&data, &cfg).unwrap();
        let mu = m.variational_means();
        let mean_abs = mu.iter().map(|v| v.abs()).sum::<f64>() / mu.len() as f64;
        assert!(mean_abs < 0.1, "mean |μ| = {mean_abs}");
        let sd = m.variational_stddevs();
        let mean_sd = sd.iter().sum::<f64>() / sd.len() as f64;
        assert!(
            mean_sd > 2.0 * INIT_POSTERIOR_STD,
            "posterior stddev should grow toward the prior, got {mean_sd}"
        );
    }

    #[test]
    fn collapsed_posterior_has_no_epistemic_spread() {
        let data = fixture(100, 0.05, 4);
        let cfg = EnsembleConfig {
            epochs: 10,
            ..EnsembleConfig::default()
        };
        let m = train_ensemble_model(&data, &cfg).unwrap().with_collapsed_posterior();
        let out = ensemble_predict(&m, data.features(), 20, 1).unwrap();
        let dec = decompose_uncertainty(&out).unwrap();
        assert!(dec.epistemic.iter().all(|&e| e == 0.0));
        assert!(ensemble_predict(&m, data.features(), 1, 1).is_err());
    }

    #[test]
    fn draws_are_reproducible_and_seed_dependent() {
        let data = fixture(150, 0.05, 5);
        let cfg = EnsembleConfig {
            epochs: 100,
            ..EnsembleConfig::default()
        };
        let m = train_ensemble_model(&data, &cfg).unwrap();
        let a = ensemble_predict(&m, data.features(), 200, 7).unwrap();
        let b = ensemble_predict(&m, data.features(), 200, 7).unwrap();
        let c = ensemble_predict(&m, data.features(), 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (da, dc) = (decompose_uncertainty(&a).unwrap(), decompose_uncertainty(&c).unwrap());
        let close = |x: f64, y: f64| (x - y).abs() <= 0.1 * x.max(y);
        assert!(close(da.aggregate.aleatoric, dc.aggregate.aleatoric));
        assert!(close(da.aggregate.epistemic, dc.aggregate.epistemic));
    }
}
