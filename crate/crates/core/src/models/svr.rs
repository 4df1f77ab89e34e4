//! Epsilon-insensitive support vector regression with an RBF kernel, solved
//! in the dual by sequential minimal optimisation with second-order working
//! set selection.
//!
//! The 2n-variable dual is
//!
//! ```text
//! min ½ βᵀQβ + pᵀβ   s.t.  zᵀβ = 0,  0 ≤ β ≤ C
//! ```
//!
//! with `β = [α; α*]`, `z = [+1; -1]`, `p = [ε - y; ε + y]` and
//! `Q_st = z_s z_t k(x_s, x_t)`.

use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::linalg::{squared_distance, Matrix};
use crate::metrics::{Prediction, Regressor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `1 / (d · var(X))` over all feature values.
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Rule(GammaRule),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub epsilon: f64,
    pub c: f64,
    pub gamma: Gamma,
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
    /// Cap on SMO iterations.
    pub max_passes: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            epsilon: 0.03,
            c: 1.0,
            gamma: Gamma::Rule(GammaRule::Scale),
            tolerance: 1e-3,
            max_passes: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged {
        iterations: usize,
    },
    /// Hit `max_passes`; the model is usable but carries this warning.
    IterationLimit {
        kkt_violation: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvrModel {
    support: Matrix,
    /// `α_i - α*_i` for each support vector.
    coef: Vec<f64>,
    bias: f64,
    gamma: f64,
    pub status: SolverStatus,
    /// Dual coefficients of every training row, support or not.
    pub dual_coef: Vec<f64>,
}

impl SvrModel {
    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias
            + (0..self.support.rows())
                .map(|i| self.coef[i] * (-self.gamma * squared_distance(self.support.row(i), row)).exp())
                .sum::<f64>()
    }
}

impl Regressor for SvrModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        if x.cols() != self.support.cols() {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.support.cols(),
            });
        }
        Prediction::new((0..x.rows()).map(|i| self.decision(x.row(i))).collect())
    }
}

pub fn scale_gamma(x: &Matrix) -> f64 {
    let vals = x.as_slice();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.cols() as f64 * var)
    } else {
        1.0
    }
}

const TAU: f64 = 1e-12;

pub fn fit_svr(train: &DesignMatrix, cfg: &SvrConfig) -> Result<SvrModel> {
    if !(cfg.epsilon >= 0.0) {
        return Err(Error::Config(format!("svr epsilon must be >= 0, got {}", cfg.epsilon)));
    }
    if !(cfg.c > 0.0) {
        return Err(Error::Config(format!("svr C must be > 0, got {}", cfg.c)));
    }
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Empty("svr training set"));
    }
    let x = train.features();
    let y = train.targets();
    let gamma = match cfg.gamma {
        Gamma::Rule(GammaRule::Scale) => scale_gamma(x),
        Gamma::Fixed(g) if g > 0.0 => g,
        Gamma::Fixed(g) => return Err(Error::Config(format!("svr gamma must be > 0, got {g}"))),
    };

    // full kernel matrix; the training sets here are at most a few thousand rows
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = (-gamma * squared_distance(x.row(i), x.row(j))).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }

    let l = 2 * n;
    let c = cfg.c;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |s: usize, t: usize| sign(s) * sign(t) * k[(s % n, t % n)];
    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                cfg.epsilon - y[t]
            } else {
                cfg.epsilon + y[t - n]
            }
        })
        .collect();

    let mut iterations = 0;
    let mut violation;
    loop {
        // working set selection (second-order, Fan, Chen & Lin 2005)
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            let up = if sign(t) > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up {
                let v = -sign(t) * grad[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..l {
                let low = if sign(t) > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
                if !low {
                    continue;
                }
                let v = sign(t) * grad[t];
                if v >= gmax2 {
                    gmax2 = v;
                }
                let grad_diff = gmax + v;
                if grad_diff > 0.0 {
                    let quad = 2.0 - 2.0 * k[(i % n, t % n)];
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        violation = gmax + gmax2;
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            violation = violation.max(0.0);
            break;
        };
        if violation < cfg.tolerance {
            break;
        }
        if iterations >= cfg.max_passes {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if sign(i) != sign(j) {
            let quad = (2.0 + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // offset from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    };
    let bias = -rho;

    let dual_coef: Vec<f64> = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();
    let sv: Vec<usize> = (0..n).filter(|&i| dual_coef[i] != 0.0).collect();
    let status = if violation < cfg.tolerance {
        SolverStatus::Converged { iterations }
    } else {
        log::warn!("svr stopped after {iterations} iterations with KKT violation {violation:e}");
        SolverStatus::IterationLimit {
            kkt_violation: violation,
        }
    };
    Ok(SvrModel {
        support: x.select_rows(&sv),
        coef: sv.iter().map(|&i| dual_coef[i]).collect(),
        bias,
        gamma,
        status,
        dual_coef,
    })
}
