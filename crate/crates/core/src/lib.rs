//! Tabular regression toolkit for predicting the dimensional deviation
//! (difference from target, DFT, in mm) of additively manufactured parts.
//!
//! The crate bundles:
//!
//! * [`data`]: schema, CSV ingestion, one-hot encoding, scaling and a
//!   synthetic fixture generator.
//! * [`metrics`]: the regressor contracts shared by every model family plus
//!   RMSE and parity tables.
//! * [`models`]: point-estimate regressors (kNN, CART tree, random forest,
//!   gradient-boosted trees, epsilon-SVR, MLP).
//! * [`gpr`]: exact Gaussian process regression with a Matérn 3/2 + white
//!   noise kernel.
//! * [`bnn`]: two variational Bayesian neural networks and the
//!   aleatoric/epistemic decomposition of their ensemble predictions.
//! * [`harness`]: dual Monte Carlo subsampling with nested k-fold grid search,
//!   fraction sweeps and uncertainty trend studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod data;
pub mod error;
pub mod gpr;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
