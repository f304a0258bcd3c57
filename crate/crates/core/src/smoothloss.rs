//! Check loss and its Huber-type smoothing.
//!
//! The check loss splits as `rho_tau(u) = |u|/2 + (tau - 1/2) u`; only the
//! absolute-value half is smoothed, with a quadratic patch of half-width `mu`.

use crate::error::{Error, Result};

/// Half-width of the quadratic smoothing region. Always positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(SmoothingParam(mu))
        } else {
            Err(Error::config(format!("smoothing mu must be > 0, got {mu}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("quantile level tau must lie in (0,1), got {tau}")))
    }
}

pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    let ind = if u < 0.0 { 1.0 } else { 0.0 };
    Ok(u * (tau - ind))
}

/// Smoothed `|u|`: exact outside `(-mu, mu)`, `u^2/(2mu) + mu/2` inside.
pub fn smooth_abs(u: f64, mu: SmoothingParam) -> f64 {
    let mu = mu.0;
    if u.abs() >= mu {
        u.abs()
    } else {
        u * u / (2.0 * mu) + mu / 2.0
    }
}

pub fn smooth_abs_grad(u: f64, mu: SmoothingParam) -> f64 {
    let m = mu.0;
    if u.abs() >= m {
        if u > 0.0 {
            1.0
        } else {
            -1.0
        }
    } else {
        u / m
    }
}

/// `h(z, mu) = 1/2 sum smooth_abs(z_i) + (tau - 1/2) sum z_i`.
pub fn smoothed_local_loss(residuals: &[f64], tau: f64, mu: SmoothingParam) -> f64 {
    let abs_part: f64 = residuals.iter().map(|&z| smooth_abs(z, mu)).sum();
    let lin_part: f64 = residuals.iter().sum();
    0.5 * abs_part + (tau - 0.5) * lin_part
}

/// Unsmoothed counterpart of [`smoothed_local_loss`].
pub fn check_loss_sum(residuals: &[f64], tau: f64) -> f64 {
    residuals
        .iter()
        .map(|&z| z * (tau - if z < 0.0 { 1.0 } else { 0.0 }))
        .sum()
}
