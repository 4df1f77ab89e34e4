//! Training objectives and the shared minibatch training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{kl_gaussian, nll_with_grad, positive_scale, sigmoid};
use super::network::{Mode, Network, Noise, Pass};
use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::optim::{Adam, RmsProp};
use crate::rng::Rng;
use crate::{Error, Result};

/// One evaluation of a training objective. `kl` is the weighted KL
/// contribution, so `total = nll + kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// Per-epoch averages over minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

pub fn write_loss_trace<W: std::io::Write>(trace: &[EpochLoss], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "nll", "kl", "total"])?;
    for e in trace {
        w.write_record([
            e.epoch.to_string(),
            e.nll.to_string(),
            e.kl.to_string(),
            e.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kl_weight: f64,
    /// Penalise `KL(N(μ, σ) ‖ N(0, 1))` of the predicted output distribution.
    pub output_kl: bool,
}

/// Gaussian-head NLL plus weighted KL terms. The KL of any variational
/// layers from their standard-normal prior is always included. When `grad`
/// is given it is overwritten with the gradient of `total`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    net: &Network,
    params: &[f64],
    x: &Matrix,
    y: &[f64],
    obj: Objective,
    mode: Mode,
    noise: &Noise,
    grad: Option<&mut [f64]>,
) -> Result<(LossParts, Pass)> {
    if net.output_dim() != 2 {
        return Err(Error::Config("gaussian head needs exactly two network outputs".into()));
    }
    let pass = net.forward(params, x, mode, noise)?;
    let out = pass.output();
    let n = y.len();
    let mu: Vec<f64> = (0..n).map(|r| out[2 * r]).collect();
    let raw: Vec<f64> = (0..n).map(|r| out[2 * r + 1]).collect();
    let (nll, mut d_mu, mut d_raw) = nll_with_grad(&mu, &raw, y)?;
    let nf = n as f64;
    let mut kl = 0.0;
    if obj.output_kl {
        for r in 0..n {
            let s = positive_scale(raw[r]);
            kl += obj.kl_weight * kl_gaussian(mu[r], s, 0.0, 1.0) / nf;
            d_mu[r] += obj.kl_weight * mu[r] / nf;
            d_raw[r] += obj.kl_weight * (s - 1.0 / s) * sigmoid(raw[r]) / nf;
        }
    }
    let parts = match grad {
        Some(g) => {
            g.iter_mut().for_each(|v| *v = 0.0);
            let d_out: Vec<f64> = (0..n).flat_map(|r| [d_mu[r], d_raw[r]]).collect();
            net.backward(params, &pass, d_out, noise, g);
            kl += obj.kl_weight * net.weight_kl(params, obj.kl_weight, Some(g));
            LossParts {
                nll,
                kl,
                total: nll + kl,
            }
        }
        None => {
            kl += obj.kl_weight * net.weight_kl(params, obj.kl_weight, None);
            LossParts {
                nll,
                kl,
                total: nll + kl,
            }
        }
    };
    if !parts.total.is_finite() {
        return Err(Error::Numerical("training objective is not finite".into()));
    }
    Ok((parts, pass))
}

/// `NLL + kl_weight · KL(q ‖ prior)` with one reparameterised weight draw
/// (`noise`) and batch statistics in batch norm.
pub fn elbo_loss(
    net: &Network,
    params: &[f64],
    x: &Matrix,
    y: &[f64],
    kl_weight: f64,
    noise: &Noise,
    grad: Option<&mut [f64]>,
) -> Result<LossParts> {
    let obj = Objective {
        kl_weight,
        output_kl: false,
    };
    objective(net, params, x, y, obj, Mode::Train, noise, grad).map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OptimizerKind {
    Adam,
    RmsProp,
}

enum Optimizer {
    Adam(Adam),
    RmsProp(RmsProp),
}

impl Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Adam(o) => o.step(params, grad),
            Optimizer::RmsProp(o) => o.step(params, grad),
        }
    }
}

pub(crate) struct TrainSpec {
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub objective: Objective,
}

/// Minibatch training with per-epoch reshuffling. Each step draws fresh
/// weight noise for variational layers and folds the batch statistics into
/// the batch-norm running averages.
pub(crate) fn train(
    net: &mut Network,
    params: &mut [f64],
    data: &DesignMatrix,
    spec: &TrainSpec,
    rng: &mut Rng,
) -> Result<Vec<EpochLoss>> {
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Empty("bnn training set"));
    }
    if !(spec.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let batch = spec.batch_size.unwrap_or(n).clamp(1, n);
    if spec.batch_size == Some(0) {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut opt = match spec.optimizer {
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(params.len(), spec.learning_rate)),
        OptimizerKind::RmsProp => Optimizer::RmsProp(RmsProp::new(params.len(), spec.learning_rate)),
    };
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(spec.epochs);
    let mut step = 0;
    for epoch in 0..spec.epochs {
        if batch < n {
            order.shuffle(rng);
        }
        let mut acc = [0.0; 3];
        for chunk in order.chunks(batch) {
            let (x, y);
            let (xb, yb) = if batch == n {
                (data.features(), data.targets())
            } else {
                x = data.features().select_rows(chunk);
                y = chunk.iter().map(|&i| data.targets()[i]).collect::<Vec<_>>();
                (&x, y.as_slice())
            };
            let noise = net.sample_noise(rng);
            let (parts, pass) = match objective(
                net,
                params,
                xb,
                yb,
                spec.objective,
                Mode::Train,
                &noise,
                Some(&mut grad),
            ) {
                Ok(v) => v,
                Err(Error::Numerical(_)) => {
                    return Err(Error::Diverged {
                        iteration: step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    iteration: step,
                    loss: parts.total,
                });
            }
            opt.step(params, &grad);
            net.update_running_stats(&pass);
            let w = chunk.len() as f64 / n as f64;
            acc[0] += w * parts.nll;
            acc[1] += w * parts.kl;
            acc[2] += w * parts.total;
            step += 1;
        }
        trace.push(EpochLoss {
            epoch,
            nll: acc[0],
            kl: acc[1],
            total: acc[2],
        });
    }
    Ok(trace)
}
