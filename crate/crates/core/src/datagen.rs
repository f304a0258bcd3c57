//! Synthetic compressible-model scenarios and CSV ingestion.
//!
//! Features are drawn from `N(0, Sigma)` with `Sigma_pq = 0.5^|p-q|`; the
//! heteroscedastic feature is pushed through the normal CDF so it lies in
//! `(0, 1)`. Responses follow
//!
//! ```text
//! y = sum_p xi_p x_p + sum_{p in A} x_p + 0.7 eps x_h + nu,   nu ~ N(0, s_l^2)
//! ```
//!
//! with one noise scale `s_l = |N(0,1)|` per client, so the true `tau`-quantile
//! model has coefficients `xi + 1_A + 0.7 Phi^-1(tau) e_h` and, as intercept,
//! the `tau`-quantile of the equal-weight mixture of the client noise laws.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::client::ClientDataset;
use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::normal;
use crate::smoothloss::validate_tau;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleCounts {
    Uniform(usize),
    PerClient(Vec<usize>),
}

fn default_hetero_index() -> usize {
    1
}
fn default_hetero_scale() -> f64 {
    0.7
}
fn default_xi_sd() -> f64 {
    1e-3
}
fn default_noise_scale() -> f64 {
    1.0
}

/// Synthetic scenario description. Feature indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(alias = "M")]
    pub samples_per_client: SampleCounts,
    #[serde(alias = "L")]
    pub clients: usize,
    #[serde(alias = "P")]
    pub features: usize,
    pub tau: f64,
    pub active_set: Vec<usize>,
    #[serde(default = "default_hetero_index")]
    pub heteroscedastic_index: usize,
    /// Multiplier of `eps * x_h` (0.7 in the standard scenarios).
    #[serde(default = "default_hetero_scale")]
    pub hetero_scale: f64,
    #[serde(default = "default_xi_sd")]
    pub xi_sd: f64,
    /// Multiplier on every client noise scale; 0 switches `nu` off.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Scenario with the standard noise model and `M` rows on every client.
    pub fn new(m: usize, l: usize, p: usize, tau: f64, active_set: Vec<usize>, seed: u64) -> Self {
        ScenarioSpec {
            samples_per_client: SampleCounts::Uniform(m),
            clients: l,
            features: p,
            tau,
            active_set,
            heteroscedastic_index: 1,
            hetero_scale: 0.7,
            xi_sd: 1e-3,
            noise_scale: 1.0,
            seed,
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        match &self.samples_per_client {
            SampleCounts::Uniform(m) => vec![*m; self.clients],
            SampleCounts::PerClient(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        if self.clients == 0 || self.features == 0 {
            return Err(Error::config("scenario needs L >= 1 and P >= 1"));
        }
        let counts = self.counts();
        if counts.len() != self.clients || counts.iter().any(|&m| m == 0) {
            return Err(Error::config("scenario needs one sample count >= 1 per client"));
        }
        let in_range = |i: usize| (1..=self.features).contains(&i);
        if let Some(&bad) = self.active_set.iter().find(|&&i| !in_range(i)) {
            return Err(Error::config(format!("active index {bad} outside 1..={}", self.features)));
        }
        if !in_range(self.heteroscedastic_index) {
            return Err(Error::config("heteroscedastic index outside the feature range"));
        }
        for (name, v) in [
            ("xi_sd", self.xi_sd),
            ("hetero_scale", self.hetero_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Generative truth of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w_star: ModelVector,
    pub client_scales: Vec<f64>,
    /// 0-based indices of the O(1) coefficients.
    pub active: Vec<usize>,
}

impl GroundTruth {
    pub fn is_active(&self, p: usize) -> bool {
        self.active.binary_search(&p).is_ok()
    }
}

/// `tau`-quantile of the equal-weight mixture of `N(0, s_l^2)`, by bisection.
pub fn mixture_quantile(scales: &[f64], tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::config("mixture scales must be a nonempty list of positive values"));
    }
    let cdf = |q: f64| scales.iter().map(|&s| normal::cdf(q / s)).sum::<f64>() / scales.len() as f64;
    let max = scales.iter().copied().fold(0.0, f64::max);
    let (mut lo, mut hi) = (-10.0 * max, 10.0 * max);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..2000 {
        mid = 0.5 * (lo + hi);
        let f = cdf(mid);
        if (f - tau).abs() <= 1e-12 || mid <= lo || mid >= hi {
            break;
        }
        if f < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Draws every client's data and the matching ground truth.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Vec<ClientDataset>, GroundTruth)> {
    spec.validate()?;
    let p = spec.features;
    let h = spec.heteroscedastic_index - 1;
    let cov = DMatrix::from_fn(p, p, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::config("feature covariance is not positive definite"))?
        .l();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let xi_law = Normal::new(0.0, spec.xi_sd).map_err(|e| Error::config(e.to_string()))?;
    let xi: Vec<f64> = (0..p).map(|_| xi_law.sample(&mut rng)).collect();
    let mut beta = xi.clone();
    for &a in &spec.active_set {
        beta[a - 1] += 1.0;
    }

    let mut datasets = Vec::with_capacity(spec.clients);
    let mut scales = Vec::with_capacity(spec.clients);
    for (l, m) in spec.counts().into_iter().enumerate() {
        let upsilon: f64 = StandardNormal.sample(&mut rng);
        let scale = upsilon.abs() * spec.noise_scale;
        scales.push(scale);
        let mut x = DMatrix::zeros(m, p + 1);
        let mut y = DVector::zeros(m);
        for i in 0..m {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let mut row = &chol * z;
            row[h] = normal::cdf(row[h]);
            let eps: f64 = StandardNormal.sample(&mut rng);
            let nu: f64 = StandardNormal.sample(&mut rng);
            let signal: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            y[i] = signal + spec.hetero_scale * eps * row[h] + scale * nu;
            for j in 0..p {
                x[(i, j)] = row[j];
            }
            x[(i, p)] = 1.0;
        }
        datasets.push(ClientDataset::new(l as u32, x, y)?);
    }

    let hetero_coef = spec.hetero_scale * normal::quantile(spec.tau);
    beta[h] += hetero_coef;
    let intercept = if scales.iter().all(|&s| s > 0.0) {
        mixture_quantile(&scales, spec.tau)?
    } else if scales.iter().all(|&s| s == 0.0) {
        0.0
    } else {
        let positive: Vec<f64> = scales.iter().copied().filter(|&s| s > 0.0).collect();
        // point masses at 0 mixed with normals: solve on the positive part
        mixture_quantile_with_atoms(&positive, scales.len() - positive.len(), spec.tau)
    };

    let mut active: Vec<usize> = spec.active_set.iter().map(|a| a - 1).collect();
    if hetero_coef != 0.0 {
        active.push(h);
    }
    active.sort_unstable();
    active.dedup();
    Ok((
        datasets,
        GroundTruth {
            w_star: ModelVector::from_parts(&beta, intercept),
            client_scales: scales,
            active,
        },
    ))
}

// Mixture quantile when some components are a point mass at zero.
fn mixture_quantile_with_atoms(scales: &[f64], atoms: usize, tau: f64) -> f64 {
    let total = (scales.len() + atoms) as f64;
    let cdf = |q: f64| {
        let atom = if q >= 0.0 { atoms as f64 } else { 0.0 };
        (scales.iter().map(|&s| normal::cdf(q / s)).sum::<f64>() + atom) / total
    };
    let max = scales.iter().copied().fold(1e-300, f64::max);
    let (mut lo, mut hi) = (-10.0 * max, 10.0 * max);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// How training rows are spread over clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Shuffle with `seed`, then deal training rows round-robin to `clients`.
    Random { clients: usize, seed: u64 },
    /// The whole file is one client's data (shuffled only for the train/test split).
    ByFile { client_id: u32, seed: u64 },
}

/// Reads a headered numeric CSV, holds out `1 - train_fraction` of the rows as
/// a test set, and partitions the rest.
pub fn load_csv(
    path: &Path,
    response_column: &str,
    partition: Partition,
    train_fraction: f64,
) -> Result<(Vec<ClientDataset>, ClientDataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config("train_fraction must lie in [0,1]"));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let y_col = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::config(format!("response column {response_column:?} not found")))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 2; // 1-based, after the header
        if record.len() != headers.len() {
            return Err(Error::Ingest {
                row: row_no,
                column: String::new(),
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut feats = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Ingest {
                row: row_no,
                column: headers[c].clone(),
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest {
                    row: row_no,
                    column: headers[c].clone(),
                    msg: "non-finite value".into(),
                });
            }
            if c == y_col {
                ys.push(v);
            } else {
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Ingest {
            row: 1,
            column: String::new(),
            msg: "file has no data rows".into(),
        });
    }

    let seed = match partition {
        Partition::Random { seed, .. } | Partition::ByFile { seed, .. } => seed,
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * rows.len() as f64).round() as usize;
    let (train_idx, test_idx) = order.split_at(n_train);

    let pick = |id: u32, idx: &[usize]| -> Result<ClientDataset> {
        let r: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        if r.is_empty() {
            let p = headers.len() - 1;
            return ClientDataset::new(id, DMatrix::from_element(0, p + 1, 1.0), DVector::zeros(0));
        }
        ClientDataset::from_rows(id, &r, &y)
    };
    let train = match partition {
        Partition::Random { clients, .. } => {
            if clients == 0 {
                return Err(Error::config("partition needs at least one client"));
            }
            (0..clients)
                .map(|l| {
                    let idx: Vec<usize> =
                        train_idx.iter().copied().skip(l).step_by(clients).collect();
                    pick(l as u32, &idx)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Partition::ByFile { client_id, .. } => vec![pick(client_id, train_idx)?],
    };
    let test = pick(u32::MAX, test_idx)?;
    Ok((train, test))
}

/// Writes a dataset as `x1,...,xP,y` (the ones column is implied).
pub fn write_client_csv(data: &ClientDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = data.n_features();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.n_samples() {
        let mut rec: Vec<String> = (0..p).map(|j| data.features()[(i, j)].to_string()).collect();
        rec.push(data.responses()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a headered numeric CSV whose last column is the response, keeping row order.
pub fn read_client_csv(path: &Path, client_id: u32) -> Result<ClientDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(Error::Ingest {
            row: 1,
            column: String::new(),
            msg: "need at least one feature column and the response".into(),
        });
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut vals = Vec::with_capacity(headers.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::Ingest {
                    row: r + 2,
                    column: headers.get(c).cloned().unwrap_or_default(),
                    msg: format!("bad numeric cell {cell:?}"),
                }
            })?;
            vals.push(v);
        }
        if vals.len() != headers.len() {
            return Err(Error::Ingest {
                row: r + 2,
                column: String::new(),
                msg: format!("expected {} fields, found {}", headers.len(), vals.len()),
            });
        }
        y.push(vals.pop().unwrap_or_default());
        x.push(vals);
    }
    if x.is_empty() {
        return Err(Error::Ingest {
            row: 1,
            column: String::new(),
            msg: "file has no data rows".into(),
        });
    }
    ClientDataset::from_rows(client_id, &x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_spec_is_all_zero() {
        let mut spec = ScenarioSpec::new(5, 2, 3, 0.5, vec![], 1);
        spec.xi_sd = 0.0;
        spec.hetero_scale = 0.0;
        spec.noise_scale = 0.0;
        let (data, truth) = generate_scenario(&spec).unwrap();
        for d in &data {
            assert!(d.responses().iter().all(|&y| y == 0.0));
        }
        assert!(truth.w_star.as_slice().iter().all(|&w| w == 0.0));
        assert!(truth.active.is_empty());
    }

    #[test]
    fn scenario_one_shapes() {
        let spec = ScenarioSpec::new(10, 20, 100, 0.55, vec![6, 12, 15, 20], 7);
        let (data, truth) = generate_scenario(&spec).unwrap();
        assert_eq!(data.len(), 20);
        for (l, d) in data.iter().enumerate() {
            assert_eq!(d.client_id(), l as u32);
            assert_eq!(d.features().shape(), (10, 101));
            for i in 0..10 {
                let x1 = d.features()[(i, 0)];
                assert!(x1 > 0.0 && x1 < 1.0);
            }
        }
        assert_eq!(truth.w_star.len(), 101);
        assert_eq!(truth.active, vec![0, 5, 11, 14, 19]);
        let h = 0.7 * normal::quantile(0.55);
        assert!((truth.w_star.coeffs()[0] - h).abs() < 0.01);
        assert!((truth.w_star.coeffs()[5] - 1.0).abs() < 0.01);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = ScenarioSpec::new(4, 3, 6, 0.7, vec![2], 99);
        assert_eq!(generate_scenario(&spec).unwrap(), generate_scenario(&spec).unwrap());
    }

    #[test]
    fn validation() {
        assert!(ScenarioSpec::new(4, 3, 6, 0.7, vec![7], 1).validate().is_err());
        assert!(ScenarioSpec::new(4, 3, 6, 0.7, vec![0], 1).validate().is_err());
        assert!(ScenarioSpec::new(0, 3, 6, 0.7, vec![], 1).validate().is_err());
        assert!(ScenarioSpec::new(4, 3, 6, 1.0, vec![], 1).validate().is_err());
    }

    #[test]
    fn mixture_quantile_examples() {
        assert_eq!(mixture_quantile(&[1.0], 0.5).unwrap(), 0.0);
        assert_eq!(mixture_quantile(&[0.3, 2.0, 5.0], 0.5).unwrap(), 0.0);
        assert!((mixture_quantile(&[1.0], 0.7).unwrap() - 0.524_400_5).abs() < 1e-7);
        assert!(mixture_quantile(&[1.0], 1.2).is_err());
        assert!(mixture_quantile(&[], 0.3).is_err());
        let a = mixture_quantile(&[1.0, 2.0], 0.55).unwrap();
        let b = mixture_quantile(&[1.0, 2.0], 0.7).unwrap();
        assert!(0.0 < a && a < b);
    }

    #[test]
    fn atoms_shift_quantile() {
        let q = mixture_quantile_with_atoms(&[1.0], 1, 0.7);
        // (Phi(q) + 1)/2 = 0.7 => Phi(q) = 0.4 => q < 0 impossible with atom at 0;
        // atom jumps the CDF from Phi(0-)/2 = 0.25 to 0.75 at zero
        assert!(q.abs() < 1e-9);
    }
}
