//! Exact Gaussian process regression with an isotropic Matérn (ν = 3/2)
//! covariance plus white observation noise.
//!
//! Hyperparameters are optimised in log space by projected gradient ascent on
//! the log marginal likelihood, using Barzilai–Borwein step lengths with
//! Armijo backtracking, and restarted from log-uniform random points.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::linalg::{cholesky_with_jitter, squared_distance, Cholesky, Matrix};
use crate::metrics::{Prediction, PredictiveDistribution, ProbabilisticRegressor, Regressor};
use crate::{rng, Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bounds applied to every hyperparameter during optimisation.
pub const PARAM_BOUNDS: (f64, f64) = (1e-5, 1e5);
/// Range from which restart points are drawn, log-uniformly.
pub const RESTART_RANGE: (f64, f64) = (1e-3, 1e3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub amplitude: f64,
    pub length_scale: f64,
    /// Variance of the white-noise term.
    pub noise_level: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            amplitude: 1.0,
            length_scale: 1.0,
            noise_level: 1.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude > 0.0 && self.length_scale > 0.0 && self.noise_level >= 0.0;
        if !ok || !(self.amplitude.is_finite() && self.length_scale.is_finite() && self.noise_level.is_finite()) {
            return Err(Error::Config(format!("invalid kernel parameters {self:?}")));
        }
        Ok(())
    }

    pub fn to_log(self) -> [f64; 3] {
        [self.amplitude.ln(), self.length_scale.ln(), self.noise_level.ln()]
    }

    pub fn from_log(t: [f64; 3]) -> Self {
        KernelParams {
            amplitude: t[0].exp(),
            length_scale: t[1].exp(),
            noise_level: t[2].exp(),
        }
    }
}

#[inline]
pub fn matern32(r: f64, amplitude: f64, length_scale: f64) -> f64 {
    let s = SQRT3 * r / length_scale;
    amplitude * (1.0 + s) * (-s).exp()
}

fn check_dims(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::LengthMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    Ok(())
}

/// Cross-covariance between two point sets (no noise term).
pub fn gram_cross(x1: &Matrix, x2: &Matrix, params: &KernelParams) -> Result<Matrix> {
    check_dims(x1, x2)?;
    let mut k = Matrix::zeros(x1.rows(), x2.rows());
    for i in 0..x1.rows() {
        let a = x1.row(i);
        for (j, out) in k.row_mut(i).iter_mut().enumerate() {
            *out = matern32(
                squared_distance(a, x2.row(j)).sqrt(),
                params.amplitude,
                params.length_scale,
            );
        }
    }
    Ok(k)
}

/// Covariance of a point set with itself, white noise on the diagonal.
pub fn gram(x: &Matrix, params: &KernelParams) -> Matrix {
    let n = x.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.amplitude + params.noise_level;
        for j in 0..i {
            let v = matern32(
                squared_distance(x.row(i), x.row(j)).sqrt(),
                params.amplitude,
                params.length_scale,
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Log marginal likelihood and its gradient with respect to
/// `(log amplitude, log length_scale, log noise_level)`.
pub fn log_marginal_likelihood(x: &Matrix, y: &[f64], params: &KernelParams) -> Result<(f64, [f64; 3])> {
    let (value, grad, _, _) = lml_parts(x, y, params, true)?;
    Ok((value, grad))
}

fn lml_parts(
    x: &Matrix,
    y: &[f64],
    params: &KernelParams,
    want_grad: bool,
) -> Result<(f64, [f64; 3], Cholesky, Vec<f64>)> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: n,
        });
    }
    let k = gram(x, params);
    let (chol, _) = cholesky_with_jitter(&k)?;
    let alpha = chol.solve(y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;
    if !value.is_finite() {
        return Err(Error::Numerical("log marginal likelihood is not finite".into()));
    }
    let mut grad = [0.0; 3];
    if want_grad {
        let kinv = chol.inverse();
        // ½ tr((ααᵀ − K⁻¹) ∂K), using symmetry to visit the lower triangle.
        for i in 0..n {
            let w_ii = alpha[i] * alpha[i] - kinv[(i, i)];
            grad[0] += 0.5 * w_ii * params.amplitude;
            grad[2] += 0.5 * w_ii * params.noise_level;
            for j in 0..i {
                let w = alpha[i] * alpha[j] - kinv[(i, j)];
                let km = k[(i, j)];
                let s = SQRT3 * squared_distance(x.row(i), x.row(j)).sqrt() / params.length_scale;
                grad[0] += w * km;
                grad[1] += w * params.amplitude * s * s * (-s).exp();
            }
        }
    }
    Ok((value, grad, chol, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprConfig {
    pub init: KernelParams,
    pub n_restarts: usize,
    /// Gradient-ascent iterations per restart.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig {
            init: KernelParams::default(),
            n_restarts: 50,
            max_iter: 200,
            seed: 2022,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GprModel {
    params: KernelParams,
    x: Matrix,
    chol: Cholesky,
    alpha: Vec<f64>,
    lml: f64,
}

#[derive(Debug, Clone, Copy)]
struct AscentResult {
    theta: [f64; 3],
    value: f64,
}

fn project(t: [f64; 3]) -> [f64; 3] {
    let (lo, hi) = (PARAM_BOUNDS.0.ln(), PARAM_BOUNDS.1.ln());
    t.map(|v| v.clamp(lo, hi))
}

fn ascend(x: &Matrix, y: &[f64], start: [f64; 3], max_iter: usize) -> Result<AscentResult> {
    let eval = |t: [f64; 3]| log_marginal_likelihood(x, y, &KernelParams::from_log(t));
    let mut theta = project(start);
    let (mut f, mut g) = eval(theta)?;
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut step = if gnorm > 0.0 { 0.1 / gnorm } else { 1.0 };
    for _ in 0..max_iter {
        let mut accepted = None;
        let mut trial = step;
        for _ in 0..40 {
            let cand = project(std::array::from_fn(|i| theta[i] + trial * g[i]));
            let moved: f64 = (0..3).map(|i| g[i] * (cand[i] - theta[i])).sum();
            if moved <= 0.0 {
                break;
            }
            if let Ok((fc, gc)) = eval(cand) {
                if fc >= f + 1e-4 * moved {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            trial *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let s: [f64; 3] = std::array::from_fn(|i| cand[i] - theta[i]);
        // Ascent on f is descent on -f, whose gradient change is g - gc.
        let sy: f64 = (0..3).map(|i| s[i] * (g[i] - gc[i])).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-8, 1e4)
        } else {
            (trial * 2.0).min(1e4)
        };
        let improvement = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        let pg: f64 = {
            let p = project(std::array::from_fn(|i| theta[i] + g[i]));
            (0..3).map(|i| (p[i] - theta[i]).powi(2)).sum::<f64>().sqrt()
        };
        if improvement.abs() < 1e-10 * (1.0 + f.abs()) || pg < 1e-8 {
            break;
        }
    }
    Ok(AscentResult { theta, value: f })
}

/// Fits kernel hyperparameters by restarted ascent and conditions the model
/// on the training data. Restart 0 starts at `cfg.init`; restart `r ≥ 1`
/// starts from the stream `(seed, r)`.
pub fn fit_gpr(train: &DesignMatrix, cfg: &GprConfig) -> Result<GprModel> {
    cfg.init.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::Empty("gpr training set"));
    }
    let x = train.features();
    let y = train.targets();
    let (lo, hi) = (RESTART_RANGE.0.ln(), RESTART_RANGE.1.ln());
    let mut best: Option<AscentResult> = None;
    let mut last_err = None;
    for r in 0..=cfg.n_restarts {
        let start = if r == 0 {
            cfg.init.to_log()
        } else {
            let mut g = rng::stream(cfg.seed, &[r as u64]);
            std::array::from_fn(|_| g.random_range(lo..hi))
        };
        match ascend(x, y, start, cfg.max_iter) {
            Ok(res) => {
                log::debug!("gpr restart {r}: lml {:.6}", res.value);
                if best.is_none_or(|b| res.value > b.value) {
                    best = Some(res);
                }
            }
            Err(e) => {
                log::debug!("gpr restart {r} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::Numerical(format!(
            "every gpr restart failed: {}",
            last_err.map_or_else(String::new, |e| e.to_string())
        ))
    })?;
    condition(x.clone(), y, KernelParams::from_log(best.theta))
}

/// Conditions a GP with fixed hyperparameters on data.
pub fn condition(x: Matrix, y: &[f64], params: KernelParams) -> Result<GprModel> {
    params.validate()?;
    let (lml, _, chol, alpha) = lml_parts(&x, y, &params, false)?;
    Ok(GprModel {
        params,
        x,
        chol,
        alpha,
        lml,
    })
}

impl GprModel {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Per-query posterior mean and latent-function variance.
    fn posterior(&self, queries: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(&self.x, queries)?;
        let out: Vec<(f64, f64)> = (0..queries.rows())
            .into_par_iter()
            .map(|q| {
                let row = queries.row(q);
                let kstar: Vec<f64> = (0..self.x.rows())
                    .map(|i| {
                        matern32(
                            squared_distance(self.x.row(i), row).sqrt(),
                            self.params.amplitude,
                            self.params.length_scale,
                        )
                    })
                    .collect();
                let mean = kstar.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
                let v = self.chol.solve_lower(&kstar);
                let var = self.params.amplitude - v.iter().map(|t| t * t).sum::<f64>();
                (mean, var)
            })
            .collect();
        Ok(out.into_iter().unzip())
    }

    /// Standard deviation of the latent function, excluding observation noise.
    pub fn latent_std(&self, queries: &Matrix) -> Result<Vec<f64>> {
        let (_, var) = self.posterior(queries)?;
        Ok(var.into_iter().map(|v| v.max(0.0).sqrt()).collect())
    }
}

impl Regressor for GprModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        Prediction::new(self.posterior(x)?.0)
    }
}

impl ProbabilisticRegressor for GprModel {
    /// Predictive distribution of a new observation: the reported stddev
    /// includes the white-noise variance.
    fn predict_dist(&self, x: &Matrix) -> Result<PredictiveDistribution> {
        let (means, var) = self.posterior(x)?;
        let stddevs = var
            .into_iter()
            .map(|v| {
                let total = v + self.params.noise_level;
                if total < -1e-10 {
                    Err(Error::Numerical(format!("negative predictive variance {total:e}")))
                } else {
                    Ok(total.max(0.0).sqrt())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        PredictiveDistribution::new(means, stddevs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, l: f64, n: f64) -> KernelParams {
        KernelParams {
            amplitude: a,
            length_scale: l,
            noise_level: n,
        }
    }

    fn five_points() -> (Matrix, Vec<f64>) {
        let x = Matrix::from_rows(&[[0.0, 0.1], [0.4, -0.3], [1.1, 0.5], [-0.7, 0.9], [0.2, 1.4]]).unwrap();
        (x, vec![0.3, -0.2, 0.8, 0.1, -0.5])
    }

    fn dense_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = Matrix::identity(n);
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs()))
                .unwrap();
            for j in 0..n {
                let (t1, t2) = (m[(c, j)], inv[(c, j)]);
                m[(c, j)] = m[(p, j)];
                inv[(c, j)] = inv[(p, j)];
                m[(p, j)] = t1;
                inv[(p, j)] = t2;
            }
            let d = m[(c, c)];
            for j in 0..n {
                m[(c, j)] /= d;
                inv[(c, j)] /= d;
            }
            for i in 0..n {
                if i != c {
                    let f = m[(i, c)];
                    for j in 0..n {
                        m[(i, j)] -= f * m[(c, j)];
                        inv[(i, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern32(0.0, 2.5, 0.7), 2.5);
        assert!((matern32(1.0, 1.0, 1.0) - 0.483_357_724_596_507_7).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let v = matern32(i as f64 * 0.3, 1.0, 1.0);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn gram_noise_only_on_self_covariance() {
        let x = Matrix::from_rows(&[[0.3, -1.0]]).unwrap();
        assert_eq!(gram(&x, &KernelParams::default()).as_slice(), &[2.0]);
        assert_eq!(gram_cross(&x, &x, &KernelParams::default()).unwrap().as_slice(), &[1.0]);
        let line = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let p = params(1.3, 0.8, 0.0);
        let k = gram_cross(&line, &line, &p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let r = (line[(i, 0)] - line[(j, 0)]).abs();
                assert!((k[(i, j)] - matern32(r, 1.3, 0.8)).abs() < 1e-15);
            }
        }
        let wrong = Matrix::from_rows(&[[0.0, 1.0, 2.0]]).unwrap();
        assert!(gram_cross(&x, &wrong, &p).is_err());
    }

    #[test]
    fn scalar_log_marginal_likelihood() {
        let x = Matrix::from_rows(&[[0.0]]).unwrap();
        let (v, _) = log_marginal_likelihood(&x, &[0.0], &KernelParams::default()).unwrap();
        assert!((v - (-1.26552)).abs() < 1e-5, "{v}");
    }

    #[test]
    fn doubling_targets_quadruples_data_fit() {
        let (x, y) = five_points();
        let p = params(0.9, 1.2, 0.05);
        let (v1, _) = log_marginal_likelihood(&x, &y, &p).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let (v2, _) = log_marginal_likelihood(&x, &y2, &p).unwrap();
        let (v0, _) = log_marginal_likelihood(&x, &[0.0; 5], &p).unwrap();
        assert!(((v2 - v0) - 4.0 * (v1 - v0)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = five_points();
        for p in [params(0.9, 1.2, 0.05), params(2.0, 0.4, 0.3), params(0.2, 3.0, 1e-3)] {
            let (_, g) = log_marginal_likelihood(&x, &y, &p).unwrap();
            let t0 = p.to_log();
            let h = 1e-5;
            for i in 0..3 {
                let mut tp = t0;
                tp[i] += h;
                let mut tm = t0;
                tm[i] -= h;
                let fp = log_marginal_likelihood(&x, &y, &KernelParams::from_log(tp)).unwrap().0;
                let fm = log_marginal_likelihood(&x, &y, &KernelParams::from_log(tm)).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-5, "param {i} at {p:?}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn single_point_posterior_halves_the_target() {
        let x = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let m = condition(x.clone(), &[0.8], KernelParams::default()).unwrap();
        let d = m.predict_dist(&x).unwrap();
        assert!((d.means[0] - 0.4).abs() < 1e-9);
        let far = Matrix::from_rows(&[[1e3, -1e3]]).unwrap();
        let d = m.predict_dist(&far).unwrap();
        assert!(d.means[0].abs() < 1e-12);
        assert!((d.stddevs[0] - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn three_point_posterior_matches_dense_inverse() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.5, 1.0], [1.5, -0.2]]).unwrap();
        let y = [0.1, -0.3, 0.25];
        let p = params(1.4, 0.9, 0.02);
        let m = condition(x.clone(), &y, p).unwrap();
        let q = Matrix::from_rows(&[[0.2, 0.3], [1.0, 1.0], [-0.5, 0.4]]).unwrap();
        let got = m.predict_dist(&q).unwrap();

        let mut k = gram(&x, &p);
        for i in 0..3 {
            k[(i, i)] += 1e-10;
        }
        let kinv = dense_inverse(&k);
        let ks = gram_cross(&x, &q, &p).unwrap();
        for c in 0..3 {
            let kc = ks.column(c);
            let w = kinv.matvec(&kc);
            let mean: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            let var = p.amplitude + p.noise_level - w.iter().zip(&kc).map(|(a, b)| a * b).sum::<f64>();
            assert!((got.means[c] - mean).abs() < 1e-8);
            assert!((got.stddevs[c] - var.sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolates_at_tiny_noise() {
        let (x, y) = five_points();
        let m = condition(x.clone(), &y, params(1.0, 1.0, 1e-8)).unwrap();
        let pred = m.predict(&x).unwrap();
        for (p, t) in pred.values.iter().zip(&y) {
            assert!((p - t).abs() < 1e-4);
        }
    }

    #[test]
    fn duplicate_training_point_changes_nothing() {
        // A duplicate is an extra noisy observation of the same value, so the
        // posterior is only invariant in the small-noise limit.
        let (x, y) = five_points();
        let mut rows: Vec<Vec<f64>> = (0..5).map(|i| x.row(i).to_vec()).collect();
        rows.push(rows[2].clone());
        let mut y2 = y.clone();
        y2.push(y[2]);
        let p = params(1.0, 0.8, 1e-6);
        let q = Matrix::from_rows(&[[0.3, 0.3], [-1.0, 0.0], [1.1, 0.5]]).unwrap();
        let a = condition(x, &y, p).unwrap().predict(&q).unwrap();
        let b = condition(Matrix::from_rows(&rows).unwrap(), &y2, p)
            .unwrap()
            .predict(&q)
            .unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn predictive_variance_is_bounded_by_the_prior() {
        let (x, y) = five_points();
        let p = params(0.7, 0.5, 0.2);
        let m = condition(x, &y, p).unwrap();
        let q = Matrix::from_rows(&[[0.0, 0.0], [0.1, 0.1], [5.0, 5.0], [0.4, -0.3]]).unwrap();
        for s in m.predict_dist(&q).unwrap().stddevs {
            assert!(s * s <= p.amplitude + p.noise_level + 1e-12);
            assert!(s >= 0.0);
        }
    }

    #[test]
    fn fitting_does_not_lower_the_likelihood() {
        let (x, y) = five_points();
        let train = DesignMatrix::from_continuous(x.clone(), y.clone()).unwrap();
        let cfg = GprConfig {
            n_restarts: 0,
            ..GprConfig::default()
        };
        let init = log_marginal_likelihood(&x, &y, &cfg.init).unwrap().0;
        let m = fit_gpr(&train, &cfg).unwrap();
        assert!(m.log_marginal_likelihood() >= init);
    }

    #[test]
    fn learns_small_noise_on_noise_free_data() {
        let rows: Vec<[f64; 2]> = (0..30).map(|i| [i as f64 / 10.0, (i % 7) as f64 / 7.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.5 * r[0] - 0.3 * r[1] + 0.1 * (r[0] * r[1]).sin())
            .collect();
        let train = DesignMatrix::from_continuous(x, y).unwrap();
        let cfg = GprConfig {
            n_restarts: 3,
            ..GprConfig::default()
        };
        let m = fit_gpr(&train, &cfg).unwrap();
        assert!(m.params().noise_level < 1e-3, "{:?}", m.params());
        let again = fit_gpr(&train, &cfg).unwrap();
        assert_eq!(m.params(), again.params());
    }
}
