//! Sequential network over a flat parameter vector with hand-written
//! backpropagation.
//!
//! Parameter layout per layer:
//!
//! * `Dense`: weights (`inputs × outputs`, row-major) then biases.
//! * `Variational`: means for weights and biases, then the matching
//!   pre-softplus scales `ρ`.
//! * `BatchNorm`: scale `γ` then shift `β`. Running statistics live outside
//!   the parameter vector.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{inv_softplus, kl_gaussian, positive_scale, sigmoid};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;
/// Initial posterior standard deviation of variational parameters.
pub const INIT_POSTERIOR_STD: f64 = 0.05;
/// Standard deviation of the initial variational means.
pub const INIT_MEAN_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Variational { inputs: usize, outputs: usize },
    BatchNorm { dim: usize },
    Relu,
    Sigmoid,
}

impl LayerKind {
    fn param_len(self) -> usize {
        match self {
            LayerKind::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerKind::Variational { inputs, outputs } => 2 * (inputs * outputs + outputs),
            LayerKind::BatchNorm { dim } => 2 * dim,
            LayerKind::Relu | LayerKind::Sigmoid => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    kind: LayerKind,
    offset: usize,
    /// Offset into the running-statistics vectors (batch norm only).
    state: usize,
}

/// One standard-normal vector per variational layer, covering its weights
/// and biases in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise(pub Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    n_params: usize,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

enum Cache {
    None,
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Sampled {
        weights: Vec<f64>,
    },
}

/// Activations and per-layer caches of one forward pass.
pub struct Pass {
    n: usize,
    acts: Vec<Vec<f64>>,
    caches: Vec<Cache>,
    mode: Mode,
}

impl Pass {
    /// Row-major network output, `n × output_dim`.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("output activations")
    }
}

impl Network {
    pub fn new(input_dim: usize, kinds: &[LayerKind]) -> Result<Network> {
        let mut width = input_dim;
        let mut offset = 0;
        let mut state = 0;
        let mut layers = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let ok = match kind {
                LayerKind::Dense { inputs, outputs } | LayerKind::Variational { inputs, outputs } => {
                    let ok = inputs == width && outputs > 0;
                    width = outputs;
                    ok
                }
                LayerKind::BatchNorm { dim } => dim == width,
                LayerKind::Relu | LayerKind::Sigmoid => true,
            };
            if !ok || width == 0 {
                return Err(Error::Config(format!("layer {kind:?} does not accept width {width}")));
            }
            layers.push(Layer { kind, offset, state });
            offset += kind.param_len();
            if let LayerKind::BatchNorm { dim } = kind {
                state += dim;
            }
        }
        Ok(Network {
            input_dim,
            layers,
            n_params: offset,
            running_mean: vec![0.0; state],
            running_var: vec![1.0; state],
        })
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l.kind {
                LayerKind::Dense { outputs, .. } | LayerKind::Variational { outputs, .. } => Some(outputs),
                LayerKind::BatchNorm { dim } => Some(dim),
                _ => None,
            })
            .unwrap_or(self.input_dim)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.running_mean.len() || var.len() != self.running_var.len() {
            return Err(Error::LengthMismatch {
                left: mean.len(),
                right: self.running_mean.len(),
            });
        }
        if var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Numerical("negative running variance".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    pub fn has_variational(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Variational { .. }))
    }

    /// `(means, scales)` index ranges of each variational layer.
    pub fn variational_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Variational { inputs, outputs } => {
                    let len = inputs * outputs + outputs;
                    Some((l.offset..l.offset + len, l.offset + len..l.offset + 2 * len))
                }
                _ => None,
            })
            .collect()
    }

    /// Index ranges of batch-norm `(γ, β)` blocks.
    pub fn batch_norm_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::BatchNorm { dim } => Some((l.offset..l.offset + dim, l.offset + dim..l.offset + 2 * dim)),
                _ => None,
            })
            .collect()
    }

    /// Glorot-uniform dense weights with zero bias, variational means from
    /// `N(0, 0.1²)` with scales at [`INIT_POSTERIOR_STD`], unit `γ`, zero `β`.
    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mean_dist = Normal::new(0.0, INIT_MEAN_STD).expect("valid normal");
        let rho0 = inv_softplus(INIT_POSTERIOR_STD);
        for l in &self.layers {
            match l.kind {
                LayerKind::Dense { inputs, outputs } => {
                    let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                    for v in &mut p[l.offset..l.offset + inputs * outputs] {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                LayerKind::Variational { inputs, outputs } => {
                    let len = inputs * outputs + outputs;
                    for v in &mut p[l.offset..l.offset + len] {
                        *v = mean_dist.sample(rng);
                    }
                    p[l.offset + len..l.offset + 2 * len].fill(rho0);
                }
                LayerKind::BatchNorm { dim } => p[l.offset..l.offset + dim].fill(1.0),
                LayerKind::Relu | LayerKind::Sigmoid => {}
            }
        }
        p
    }

    pub fn sample_noise(&self, rng: &mut Rng) -> Noise {
        Noise(
            self.variational_ranges()
                .into_iter()
                .map(|(mu, _)| (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect())
                .collect(),
        )
    }

    pub fn zero_noise(&self) -> Noise {
        Noise(
            self.variational_ranges()
                .into_iter()
                .map(|(mu, _)| vec![0.0; mu.len()])
                .collect(),
        )
    }

    pub fn forward(&self, params: &[f64], x: &Matrix, mode: Mode, noise: &Noise) -> Result<Pass> {
        if x.cols() != self.input_dim {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.input_dim,
            });
        }
        if params.len() != self.n_params {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.n_params,
            });
        }
        let n = x.rows();
        let mut acts = vec![x.as_slice().to_vec()];
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut draws = noise.0.iter();
        for l in &self.layers {
            let input = acts.last().expect("input activations");
            let (out, cache) = match l.kind {
                LayerKind::Dense { inputs, outputs } => {
                    let w = &params[l.offset..l.offset + inputs * outputs];
                    let b = &params[l.offset + inputs * outputs..l.offset + inputs * outputs + outputs];
                    (affine(input, n, inputs, outputs, w, b), Cache::None)
                }
                LayerKind::Variational { inputs, outputs } => {
                    let len = inputs * outputs + outputs;
                    let eps = draws
                        .next()
                        .ok_or_else(|| Error::Config("noise is missing a variational layer".into()))?;
                    if eps.len() != len {
                        return Err(Error::LengthMismatch {
                            left: eps.len(),
                            right: len,
                        });
                    }
                    let mu = &params[l.offset..l.offset + len];
                    let rho = &params[l.offset + len..l.offset + 2 * len];
                    let weights: Vec<f64> = (0..len).map(|i| mu[i] + positive_scale(rho[i]) * eps[i]).collect();
                    let out = affine(
                        input,
                        n,
                        inputs,
                        outputs,
                        &weights[..inputs * outputs],
                        &weights[inputs * outputs..],
                    );
                    (out, Cache::Sampled { weights })
                }
                LayerKind::BatchNorm { dim } => {
                    let gamma = &params[l.offset..l.offset + dim];
                    let beta = &params[l.offset + dim..l.offset + 2 * dim];
                    let (mean, var) = match mode {
                        Mode::Train => column_moments(input, n, dim),
                        Mode::Infer => (
                            self.running_mean[l.state..l.state + dim].to_vec(),
                            self.running_var[l.state..l.state + dim].to_vec(),
                        ),
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
                    let mut xhat = vec![0.0; n * dim];
                    let mut out = vec![0.0; n * dim];
                    for r in 0..n {
                        for j in 0..dim {
                            let h = (input[r * dim + j] - mean[j]) * inv_std[j];
                            xhat[r * dim + j] = h;
                            out[r * dim + j] = gamma[j] * h + beta[j];
                        }
                    }
                    (
                        out,
                        Cache::Norm {
                            xhat,
                            inv_std,
                            batch_mean: mean,
                            batch_var: var,
                        },
                    )
                }
                LayerKind::Relu => (input.iter().map(|v| v.max(0.0)).collect(), Cache::None),
                LayerKind::Sigmoid => (input.iter().map(|&v| sigmoid(v)).collect(), Cache::None),
            };
            acts.push(out);
            caches.push(cache);
        }
        Ok(Pass { n, acts, caches, mode })
    }

    /// Accumulates parameter gradients into `grad` given the gradient of the
    /// loss with respect to the network output.
    pub fn backward(&self, params: &[f64], pass: &Pass, d_out: Vec<f64>, noise: &Noise, grad: &mut [f64]) {
        let n = pass.n;
        let mut delta = d_out;
        let mut draws = noise.0.iter().rev();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let input = &pass.acts[idx];
            let output = &pass.acts[idx + 1];
            delta = match (l.kind, &pass.caches[idx]) {
                (LayerKind::Dense { inputs, outputs }, _) => {
                    let (gw, gb) = grad[l.offset..l.offset + inputs * outputs + outputs].split_at_mut(inputs * outputs);
                    let w = &params[l.offset..l.offset + inputs * outputs];
                    affine_backward(input, n, inputs, outputs, w, &delta, gw, gb)
                }
                (LayerKind::Variational { inputs, outputs }, Cache::Sampled { weights }) => {
                    let len = inputs * outputs + outputs;
                    let eps = draws.next().expect("noise checked in forward");
                    let mut gwb = vec![0.0; len];
                    let din = {
                        let (gw, gb) = gwb.split_at_mut(inputs * outputs);
                        affine_backward(input, n, inputs, outputs, &weights[..inputs * outputs], &delta, gw, gb)
                    };
                    let rho = &params[l.offset + len..l.offset + 2 * len];
                    for i in 0..len {
                        grad[l.offset + i] += gwb[i];
                        grad[l.offset + len + i] += gwb[i] * eps[i] * sigmoid(rho[i]);
                    }
                    din
                }
                (LayerKind::BatchNorm { dim }, Cache::Norm { xhat, inv_std, .. }) => {
                    let gamma = &params[l.offset..l.offset + dim];
                    let mut sum_d = vec![0.0; dim];
                    let mut sum_dx = vec![0.0; dim];
                    for r in 0..n {
                        for j in 0..dim {
                            let d = delta[r * dim + j];
                            sum_d[j] += d;
                            sum_dx[j] += d * xhat[r * dim + j];
                        }
                    }
                    for j in 0..dim {
                        grad[l.offset + j] += sum_dx[j];
                        grad[l.offset + dim + j] += sum_d[j];
                    }
                    let nf = n as f64;
                    let mut din = vec![0.0; n * dim];
                    for r in 0..n {
                        for j in 0..dim {
                            let d = delta[r * dim + j];
                            din[r * dim + j] = match pass.mode {
                                Mode::Train => {
                                    gamma[j] * inv_std[j] * (d - sum_d[j] / nf - xhat[r * dim + j] * sum_dx[j] / nf)
                                }
                                Mode::Infer => gamma[j] * inv_std[j] * d,
                            };
                        }
                    }
                    din
                }
                (LayerKind::Relu, _) => delta
                    .iter()
                    .zip(input)
                    .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
                    .collect(),
                (LayerKind::Sigmoid, _) => delta.iter().zip(output).map(|(d, s)| d * s * (1.0 - s)).collect(),
                (kind, _) => unreachable!("cache does not match layer {kind:?}"),
            };
        }
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, pass: &Pass) {
        for (l, cache) in self.layers.iter().zip(&pass.caches) {
            if let (
                LayerKind::BatchNorm { dim },
                Cache::Norm {
                    batch_mean, batch_var, ..
                },
            ) = (l.kind, cache)
            {
                for j in 0..dim {
                    let s = l.state + j;
                    self.running_mean[s] = BN_MOMENTUM * self.running_mean[s] + (1.0 - BN_MOMENTUM) * batch_mean[j];
                    self.running_var[s] = BN_MOMENTUM * self.running_var[s] + (1.0 - BN_MOMENTUM) * batch_var[j];
                }
            }
        }
    }

    /// KL of the variational posterior from a standard-normal prior, summed
    /// over all variational parameters. Adds `weight · ∂KL` to `grad`.
    pub fn weight_kl(&self, params: &[f64], weight: f64, grad: Option<&mut [f64]>) -> f64 {
        let mut kl = 0.0;
        let ranges = self.variational_ranges();
        for (mu, rho) in &ranges {
            for (i, j) in mu.clone().zip(rho.clone()) {
                kl += kl_gaussian(params[i], positive_scale(params[j]), 0.0, 1.0);
            }
        }
        if let Some(g) = grad {
            for (mu, rho) in ranges {
                for (i, j) in mu.zip(rho) {
                    let s = positive_scale(params[j]);
                    g[i] += weight * params[i];
                    g[j] += weight * (s - 1.0 / s) * sigmoid(params[j]);
                }
            }
        }
        kl
    }
}

fn column_moments(x: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for r in 0..n {
        for j in 0..dim {
            mean[j] += x[r * dim + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; dim];
    for r in 0..n {
        for j in 0..dim {
            let d = x[r * dim + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    (mean, var)
}

fn affine(input: &[f64], n: usize, fi: usize, fo: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * fo];
    for r in 0..n {
        let o = &mut out[r * fo..(r + 1) * fo];
        o.copy_from_slice(b);
        for k in 0..fi {
            let a = input[r * fi + k];
            for (oj, wj) in o.iter_mut().zip(&w[k * fo..(k + 1) * fo]) {
                *oj += a * wj;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn affine_backward(
    input: &[f64],
    n: usize,
    fi: usize,
    fo: usize,
    w: &[f64],
    delta: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let mut din = vec![0.0; n * fi];
    for r in 0..n {
        let d = &delta[r * fo..(r + 1) * fo];
        for (g, dv) in gb.iter_mut().zip(d) {
            *g += dv;
        }
        for k in 0..fi {
            let a = input[r * fi + k];
            let wk = &w[k * fo..(k + 1) * fo];
            let gk = &mut gw[k * fo..(k + 1) * fo];
            let mut s = 0.0;
            for j in 0..fo {
                gk[j] += a * d[j];
                s += wk[j] * d[j];
            }
            din[r * fi + k] = s;
        }
    }
    din
}
