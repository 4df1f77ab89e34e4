//! Gaussian likelihood and KL terms, plus the positive-scale transforms.

use crate::{Error, Result};

/// Floor added to every softplus-derived standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Standard deviation produced from an unconstrained scale parameter.
#[inline]
pub fn positive_scale(raw: f64) -> f64 {
    softplus(raw) + SIGMA_FLOOR
}

/// Mean over samples of `½ log(2πσ²) + (y−μ)²/(2σ²)`.
pub fn nll_loss(means: &[f64], stddevs: &[f64], targets: &[f64]) -> Result<f64> {
    if means.len() != targets.len() || stddevs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: means.len().max(stddevs.len()),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::Empty("nll targets"));
    }
    let mut total = 0.0;
    for ((m, s), y) in means.iter().zip(stddevs).zip(targets) {
        if !(m.is_finite() && s.is_finite() && y.is_finite()) || *s <= 0.0 {
            return Err(Error::Numerical(format!(
                "nll on non-finite or non-positive input (μ={m}, σ={s}, y={y})"
            )));
        }
        let z = (y - m) / s;
        total += HALF_LN_2PI + s.ln() + 0.5 * z * z;
    }
    Ok(total / targets.len() as f64)
}

/// NLL of a Gaussian head given raw outputs `(μ, raw scale)`, with the
/// gradient of the batch mean with respect to both raw outputs.
pub fn nll_with_grad(means: &[f64], raw_scales: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let stddevs: Vec<f64> = raw_scales.iter().map(|&r| positive_scale(r)).collect();
    let loss = nll_loss(means, &stddevs, targets)?;
    let n = targets.len() as f64;
    let mut d_mean = Vec::with_capacity(targets.len());
    let mut d_raw = Vec::with_capacity(targets.len());
    for (((m, s), r), y) in means.iter().zip(&stddevs).zip(raw_scales).zip(targets) {
        let resid = y - m;
        d_mean.push(-resid / (s * s) / n);
        d_raw.push((1.0 / s - resid * resid / (s * s * s)) * sigmoid(*r) / n);
    }
    Ok((loss, d_mean, d_raw))
}

/// `KL(q ‖ p)` for one pair of univariate Gaussians.
#[inline]
pub fn kl_gaussian(q_mean: f64, q_std: f64, p_mean: f64, p_std: f64) -> f64 {
    let d = q_mean - p_mean;
    (p_std / q_std).ln() + (q_std * q_std + d * d) / (2.0 * p_std * p_std) - 0.5
}

/// `KL(q ‖ p)` between diagonal Gaussians, summed over coordinates.
pub fn kl_diag_gaussians(q_mean: &[f64], q_std: &[f64], p_mean: &[f64], p_std: &[f64]) -> Result<f64> {
    let n = q_mean.len();
    if q_std.len() != n || p_mean.len() != n || p_std.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: q_std.len().min(p_mean.len()).min(p_std.len()),
        });
    }
    if q_std.iter().chain(p_std).any(|s| !(*s > 0.0)) {
        return Err(Error::Numerical("kl divergence needs positive scales".into()));
    }
    Ok((0..n)
        .map(|i| kl_gaussian(q_mean[i], q_std[i], p_mean[i], p_std[i]))
        .sum())
}
