//! First-order optimisers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::linalg::dot;

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.learning_rate * bc2.sqrt() / bc1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * *m / (v.sqrt() + self.epsilon);
        }
    }
}

/// RMSprop without momentum: `v ← ρ v + (1-ρ) g²`, `θ ← θ - lr g / (√v + ε)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    v: Vec<f64>,
}

impl RmsProp {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        RmsProp {
            learning_rate,
            decay: 0.9,
            epsilon: 1e-7,
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(self.v.iter_mut()) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (v.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the loss improves by less than this between iterations.
    pub tol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iter: 1000,
            tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the objective returned a non-finite value at an accepted
    /// point; carries the iteration at which it happened.
    pub diverged_at: Option<usize>,
}

/// Minimises `f` with L-BFGS and a strong-Wolfe line search.
///
/// `f(x, grad)` returns the objective and writes the gradient into `grad`.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return LbfgsOutcome {
            x,
            f: fx,
            iterations: 0,
            converged: false,
            diverged_at: Some(0),
        };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iter = 0;

    while iter < cfg.max_iter {
        iter += 1;
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < 1e-12 {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / gnorm.max(1.0)
        };
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += sj * (alpha[i] - beta);
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            // not a descent direction: reset memory and use steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            dg = dot(&d, &g);
        }

        let Some((step, f_new, g_new)) = wolfe_search(&mut f, &x, fx, &g, &d, dg, cfg) else {
            // line search could not make progress
            converged = true;
            break;
        };
        if !f_new.is_finite() {
            return LbfgsOutcome {
                x,
                f: f_new,
                iterations: iter,
                converged: false,
                diverged_at: Some(iter),
            };
        }
        let s: Vec<f64> = d.iter().map(|v| v * step).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        let improvement = fx - f_new;
        fx = f_new;
        g = g_new;
        if improvement.abs() < cfg.tol {
            converged = true;
            break;
        }
    }

    LbfgsOutcome {
        x,
        f: fx,
        iterations: iter,
        converged,
        diverged_at: None,
    }
}

/// Strong-Wolfe line search (bracketing + zoom with cubic interpolation).
fn wolfe_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    _g0: &[f64],
    d: &[f64],
    dg0: f64,
    cfg: &LbfgsConfig,
) -> Option<(f64, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut eval = |t: f64| {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let mut gt = vec![0.0; n];
        let ft = f(&xt, &mut gt);
        let dgt = dot(&gt, d);
        (ft, gt, dgt)
    };

    let mut t_prev = 0.0;
    let mut f_prev = f0;
    let mut dg_prev = dg0;
    let mut t = 1.0;
    for i in 0..25 {
        let (ft, gt, dgt) = eval(t);
        if !ft.is_finite() {
            // step into a non-finite region: shrink
            t = 0.5 * (t_prev + t);
            if t - t_prev < 1e-16 {
                return None;
            }
            continue;
        }
        if ft > f0 + cfg.c1 * t * dg0 || (i > 0 && ft >= f_prev) {
            return zoom(&mut eval, f0, dg0, (t_prev, f_prev, dg_prev), (t, ft, dgt), cfg);
        }
        if dgt.abs() <= -cfg.c2 * dg0 {
            return Some((t, ft, gt));
        }
        if dgt >= 0.0 {
            return zoom(&mut eval, f0, dg0, (t, ft, dgt), (t_prev, f_prev, dg_prev), cfg);
        }
        t_prev = t;
        f_prev = ft;
        dg_prev = dgt;
        t *= 2.0;
    }
    None
}

fn zoom<E>(
    eval: &mut E,
    f0: f64,
    dg0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    cfg: &LbfgsConfig,
) -> Option<(f64, f64, Vec<f64>)>
where
    E: FnMut(f64) -> (f64, Vec<f64>, f64),
{
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..30 {
        let (a, b) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let mut t = cubic_min(lo, hi).unwrap_or(0.5 * (lo.0 + hi.0));
        let width = b - a;
        if !(t > a + 0.1 * width && t < b - 0.1 * width) {
            t = 0.5 * (a + b);
        }
        if width < 1e-16 {
            break;
        }
        let (ft, gt, dgt) = eval(t);
        if ft.is_finite() && ft < f0 && best.as_ref().is_none_or(|bst| ft < bst.1) {
            best = Some((t, ft, gt.clone()));
        }
        if !ft.is_finite() || ft > f0 + cfg.c1 * t * dg0 || ft >= lo.1 {
            hi = (t, ft, dgt);
        } else {
            if dgt.abs() <= -cfg.c2 * dg0 {
                return Some((t, ft, gt));
            }
            if dgt * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, ft, dgt);
        }
    }
    // fall back to the best sufficient decrease found
    best
}

fn cubic_min(p: (f64, f64, f64), q: (f64, f64, f64)) -> Option<f64> {
    let (a, fa, da) = p;
    let (b, fb, db) = q;
    if !(fa.is_finite() && fb.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let cfg = LbfgsConfig {
            tol: 1e-14,
            ..Default::default()
        };
        let out = lbfgs(rosenbrock, vec![-1.2, 1.0], &cfg);
        assert!(out.f < 1e-10, "f = {}", out.f);
        assert!((out.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn adam_and_rmsprop_descend_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut adam = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2));

        let mut p = vec![3.0, -2.0];
        let mut rms = RmsProp::new(2, 0.01);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            rms.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 5e-2));
    }
}
