//! Fully connected regression network trained full-batch by L-BFGS or Adam.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::metrics::{Prediction, Regressor};
use crate::optim::{lbfgs, Adam, LbfgsConfig};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Lbfgs,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub optimizer: Solver,
    /// Adam step size; unused by L-BFGS.
    pub learning_rate: f64,
    pub max_iter: usize,
    /// L2 penalty on weights (not biases).
    pub alpha: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![16, 8, 4],
            activation: Activation::Tanh,
            optimizer: Solver::Lbfgs,
            learning_rate: 1e-3,
            max_iter: 5000,
            alpha: 1e-4,
            seed: 2022,
        }
    }
}

/// Network shape plus a flat parameter vector. Layer `l` stores its weight
/// matrix (`fan_in × fan_out`, row-major) followed by its bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    /// Final training loss and the number of optimiser iterations used.
    pub final_loss: f64,
    pub iterations: usize,
}

impl Mlp {
    /// Glorot-uniform weights and biases, seeded.
    pub fn init(n_inputs: usize, hidden: &[usize], activation: Activation, seed: u64) -> Mlp {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut r = rng::stream(seed, &[0x3170]);
        let mut params = Vec::with_capacity(param_count(&sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..(fan_in * fan_out + fan_out) {
                params.push(r.random_range(-bound..bound));
            }
        }
        Mlp {
            sizes,
            activation,
            params,
            final_loss: f64::NAN,
            iterations: 0,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let wlen = w[0] * w[1];
            out.push((off, off + wlen));
            off += wlen + w[1];
        }
        out
    }

    /// Index range of the output layer's weights, then the output bias index.
    pub fn output_layer(&self) -> (std::ops::Range<usize>, usize) {
        let (w, b) = *self.layer_offsets().last().expect("at least one layer");
        (w..b, b)
    }

    fn forward_with(&self, params: &[f64], x: &Matrix) -> Vec<Vec<f64>> {
        let n = x.rows();
        let offsets = self.layer_offsets();
        let mut acts = vec![x.as_slice().to_vec()];
        let last = offsets.len() - 1;
        for (l, (w_off, b_off)) in offsets.into_iter().enumerate() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let w = &params[w_off..w_off + fi * fo];
            let b = &params[b_off..b_off + fo];
            let mut z = vec![0.0; n * fo];
            for r in 0..n {
                let zr = &mut z[r * fo..(r + 1) * fo];
                zr.copy_from_slice(b);
                for k in 0..fi {
                    let a = input[r * fi + k];
                    if a == 0.0 {
                        continue;
                    }
                    for (zj, wj) in zr.iter_mut().zip(&w[k * fo..(k + 1) * fo]) {
                        *zj += a * wj;
                    }
                }
            }
            if l < last {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_rows(&self, x: &Matrix) -> Vec<f64> {
        self.forward_with(&self.params, x).pop().expect("output layer")
    }

    /// `½·mean((ŷ-y)²) + α/(2n)·Σ‖W‖²` and its gradient at `params`.
    pub fn loss_and_grad(&self, params: &[f64], x: &Matrix, y: &[f64], alpha: f64, grad: &mut [f64]) -> f64 {
        let n = x.rows();
        let nf = n as f64;
        let acts = self.forward_with(params, x);
        let offsets = self.layer_offsets();
        let out = acts.last().expect("output");
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(p, t)| {
                loss += (p - t) * (p - t);
                (p - t) / nf
            })
            .collect();
        loss /= 2.0 * nf;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (l, &(w_off, b_off)) in offsets.iter().enumerate().rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let w = &params[w_off..w_off + fi * fo];
            {
                let (gw, gb) = grad[w_off..b_off + fo].split_at_mut(fi * fo);
                for r in 0..n {
                    let dr = &delta[r * fo..(r + 1) * fo];
                    for (g, d) in gb.iter_mut().zip(dr) {
                        *g += d;
                    }
                    for k in 0..fi {
                        let a = input[r * fi + k];
                        if a == 0.0 {
                            continue;
                        }
                        for (g, d) in gw[k * fo..(k + 1) * fo].iter_mut().zip(dr) {
                            *g += a * d;
                        }
                    }
                }
                for (g, wv) in gw.iter_mut().zip(w) {
                    *g += alpha * wv / nf;
                    loss += 0.5 * alpha * wv * wv / nf;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n * fi];
                for r in 0..n {
                    let dr = &delta[r * fo..(r + 1) * fo];
                    for k in 0..fi {
                        let s: f64 = w[k * fo..(k + 1) * fo].iter().zip(dr).map(|(a, b)| a * b).sum();
                        prev[r * fi + k] = s * self.activation.derivative_from_output(input[r * fi + k]);
                    }
                }
                delta = prev;
            }
        }
        loss
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn fit_mlp(train: &DesignMatrix, cfg: &MlpConfig) -> Result<Mlp> {
    if cfg.hidden_sizes.is_empty() || cfg.hidden_sizes.contains(&0) {
        return Err(Error::Config("mlp hidden_sizes must be nonempty and positive".into()));
    }
    if train.n_rows() == 0 {
        return Err(Error::Empty("mlp training set"));
    }
    let x = train.features();
    let y = train.targets();
    let mut net = Mlp::init(x.cols(), &cfg.hidden_sizes, cfg.activation, cfg.seed);
    let tol = 1e-8;
    match cfg.optimizer {
        Solver::Lbfgs => {
            let shape = net.clone();
            let lcfg = LbfgsConfig {
                max_iter: cfg.max_iter,
                tol,
                ..LbfgsConfig::default()
            };
            let out = lbfgs(
                |p, g| shape.loss_and_grad(p, x, y, cfg.alpha, g),
                net.params.clone(),
                &lcfg,
            );
            if let Some(iteration) = out.diverged_at {
                return Err(Error::Diverged { iteration, loss: out.f });
            }
            net.params = out.x;
            net.final_loss = out.f;
            net.iterations = out.iterations;
        }
        Solver::Adam => {
            let mut opt = Adam::new(net.params.len(), cfg.learning_rate);
            let mut grad = vec![0.0; net.params.len()];
            let mut prev = f64::INFINITY;
            for it in 0..cfg.max_iter {
                let loss = net.loss_and_grad(&net.params, x, y, cfg.alpha, &mut grad);
                if !loss.is_finite() {
                    return Err(Error::Diverged { iteration: it, loss });
                }
                net.final_loss = loss;
                net.iterations = it + 1;
                if (prev - loss).abs() < tol {
                    break;
                }
                prev = loss;
                opt.step(&mut net.params, &grad);
            }
        }
    }
    Ok(net)
}

impl Regressor for Mlp {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        if x.cols() != self.sizes[0] {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.sizes[0],
            });
        }
        Prediction::new(self.predict_rows(x))
    }
}
