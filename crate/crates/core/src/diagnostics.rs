//! Rate fits and a first-order stationarity certificate for finished runs.

use crate::client::ClientDataset;
use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::penalty::PenaltyConfig;

/// Least-squares slope of `ln y` against `ln k`, skipping `k = 0` and `y <= 0`.
/// Returns `None` with fewer than two usable points.
pub fn loglog_slope(points: &[(u64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(k, y)| k > 0 && y > 0.0 && y.is_finite())
        .map(|&(k, y)| ((k as f64).ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope fitted over the last decade `k in [K/10, K]` of a series indexed
/// `series[j] <-> k = offset + j`.
pub fn tail_slope(series: &[f64], offset: u64) -> Option<f64> {
    let last = offset + series.len().checked_sub(1)? as u64;
    let from = (last / 10).max(1);
    let pts: Vec<(u64, f64)> = series
        .iter()
        .enumerate()
        .map(|(j, &y)| (offset + j as u64, y))
        .filter(|&(k, _)| k >= from)
        .collect();
    loglog_slope(&pts)
}

/// Per-coordinate distance from 0 to the interval
/// `sum_l d g_l(w)_j + n d P(w_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub distances: Vec<f64>,
    pub tolerance: f64,
}

impl StationarityReport {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    pub fn certified(&self) -> bool {
        self.max_distance() <= self.tolerance
    }
}

/// Builds the interval subdifferential of the unsmoothed objective at `w`.
/// Residuals with `|z| < zero_band` are treated as exactly zero, so their
/// check-loss subdifferential is the full `[tau - 1, tau]`.
pub fn stationarity(
    data: &[ClientDataset],
    w: &ModelVector,
    tau: f64,
    penalty: &PenaltyConfig,
    zero_band: f64,
    tolerance: f64,
) -> Result<StationarityReport> {
    let dim = w.len();
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    let mut n = 0usize;
    for d in data {
        if d.features().ncols() != dim {
            return Err(Error::config("model and data dimensions differ"));
        }
        n += d.n_samples();
        let z = d.residuals(w.as_slice())?;
        for (i, &zi) in z.iter().enumerate() {
            // d/dw rho(y - x w) = -x * s with s in the check-loss subdifferential
            let (s_lo, s_hi) = if zi.abs() < zero_band {
                (tau - 1.0, tau)
            } else if zi > 0.0 {
                (tau, tau)
            } else {
                (tau - 1.0, tau - 1.0)
            };
            for j in 0..dim {
                let x = d.features()[(i, j)];
                let (a, b) = (-x * s_lo, -x * s_hi);
                lo[j] += a.min(b);
                hi[j] += a.max(b);
            }
        }
    }
    let p = w.n_features();
    for j in 0..p {
        let (a, b) = penalty.subdifferential(w.as_slice()[j]);
        lo[j] += n as f64 * a;
        hi[j] += n as f64 * b;
    }
    let distances = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| if l > 0.0 { l } else if h < 0.0 { -h } else { 0.0 })
        .collect();
    Ok(StationarityReport {
        distances,
        tolerance,
    })
}
