//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use fspg::{ClientDataset, PenaltyConfig, PenaltyKind};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Penalty derivative on `x >= 0`, written from the thresholding definitions.
fn penalty_slope(kind: PenaltyKind, lam: f64, gam: f64, x: f64) -> f64 {
    match kind {
        PenaltyKind::Mcp => (lam - x / gam).max(0.0),
        PenaltyKind::Scad => {
            if x <= lam {
                lam
            } else {
                ((gam * lam - x) / (gam - 1.0)).max(0.0)
            }
        }
        PenaltyKind::L1 => lam,
        PenaltyKind::None => 0.0,
    }
}

/// `g(w) = int_0^|w| g'(x) dx` by Simpson's rule between the kinks, exact for
/// these piecewise-linear slopes.
pub fn penalty_by_quadrature(kind: PenaltyKind, lam: f64, gam: f64, w: f64) -> f64 {
    let x = w.abs();
    let mut knots = vec![0.0, x];
    for k in [lam, gam * lam] {
        if k > 0.0 && k < x {
            knots.push(k);
        }
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots
        .windows(2)
        .map(|ab| {
            let (a, b) = (ab[0], ab[1]);
            let f = |t| penalty_slope(kind, lam, gam, t);
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        })
        .sum()
}

pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// `argmin_w t g(w) + (w - a)^2 / 2` by golden-section search; the minimizer
/// lies between 0 and `a`.
pub fn prox_by_search(pen: &PenaltyConfig, a: f64, t: f64) -> f64 {
    let obj = |w: f64| {
        t * penalty_by_quadrature(pen.kind(), pen.lambda(), pen.gamma(), w) + 0.5 * (w - a) * (w - a)
    };
    let (lo, hi) = if a < 0.0 { (a, 0.0) } else { (0.0, a) };
    golden_section(obj, lo - 1e-3, hi + 1e-3, 1e-11)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, id: u32, m: usize, p: usize) -> ClientDataset {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..p).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let y: Vec<f64> = (0..m).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        2.0 * z
    }).collect();
    ClientDataset::from_rows(id, &rows, &y).unwrap()
}

/// Splits `data` row-wise into `parts` contiguous, nonempty chunks.
pub fn split(data: &ClientDataset, parts: usize) -> Vec<ClientDataset> {
    let m = data.n_samples();
    let p = data.n_features();
    let mut out = Vec::new();
    let mut start = 0;
    for l in 0..parts {
        let end = m * (l + 1) / parts;
        let rows: Vec<Vec<f64>> = (start..end)
            .map(|i| (0..p).map(|j| data.features()[(i, j)]).collect())
            .collect();
        let y: Vec<f64> = (start..end).map(|i| data.responses()[i]).collect();
        out.push(ClientDataset::from_rows(l as u32, &rows, &y).unwrap());
        start = end;
    }
    out
}

/// Largest eigenvalue of the pooled `X^T X` from a dense symmetric eigensolver.
pub fn dense_lambda_max(parts: &[ClientDataset]) -> f64 {
    let dim = parts[0].features().ncols();
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    for d in parts {
        gram += d.features().transpose() * d.features();
    }
    SymmetricEigen::new(gram).eigenvalues.iter().copied().fold(f64::MIN, f64::max)
}

/// Central finite-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|j| {
            let mut up = w.to_vec();
            let mut dn = w.to_vec();
            up[j] += h;
            dn[j] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Check loss written as `u (tau - 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Smoothed check loss summed over residuals, straight from the Huber form.
pub fn smoothed_sum(z: &[f64], tau: f64, mu: f64) -> f64 {
    z.iter()
        .map(|&u| {
            let f = if u.abs() >= mu { u.abs() } else { u * u / (2.0 * mu) + mu / 2.0 };
            0.5 * f + (tau - 0.5) * u
        })
        .sum()
}

/// Empirical `tau`-quantile of an equal-weight normal mixture from `n` draws.
pub fn mc_mixture_quantile(scales: &[f64], tau: f64, n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut xs: Vec<f64> = (0..n)
        .map(|i| {
            let s = scales[i % scales.len()];
            let z: f64 = StandardNormal.sample(&mut r);
            s * z
        })
        .collect();
    let k = ((tau * n as f64).ceil() as usize).saturating_sub(1);
    let (_, q, _) = xs.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap());
    *q
}

/// Counts matching active/inactive labels one coefficient at a time.
pub fn count_support_matches(w_hat: &[f64], active: &[usize], eps: f64) -> f64 {
    let mut hits = 0;
    for (j, w) in w_hat.iter().enumerate() {
        let predicted = w.abs() > eps;
        let truly = active.contains(&j);
        if predicted == truly {
            hits += 1;
        }
    }
    hits as f64 / w_hat.len() as f64
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
