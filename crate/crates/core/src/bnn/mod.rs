//! Bayesian neural-network regressors trained by variational inference and
//! the aleatoric/epistemic decomposition of their ensemble predictions.

pub mod decompose;
pub mod loss;
pub mod models;
pub mod network;
pub mod snapshot;
pub mod train;

pub use decompose::{decompose_uncertainty, AggregateUncertainty, EnsembleOutput, UncertaintyDecomposition};
pub use loss::{inv_softplus, kl_diag_gaussians, nll_loss, nll_with_grad, positive_scale, softplus, SIGMA_FLOOR};
pub use models::{
    ensemble_architecture, ensemble_predict, head_architecture, train_ensemble_model, train_head_model, EnsembleConfig,
    EnsembleModel, HeadConfig, HeadModel,
};
pub use network::{LayerKind, Mode, Network, Noise};
pub use snapshot::{BnnSnapshot, SNAPSHOT_VERSION};
pub use train::{elbo_loss, objective, write_loss_trace, EpochLoss, LossParts, Objective};
