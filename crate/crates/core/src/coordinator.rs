//! Server side of FSPG and the comparison methods that share its loop.
//!
//! Round `k` asks every client for the gradient and loss at `(w^k, mu^{k+1})`,
//! sums the replies in ascending client id, and takes the proximal step
//! `w^{k+1} = prox(w^k - G/sigma^{k+1}; n/sigma^{k+1})` on the coefficients
//! while the intercept moves by the plain gradient step.
//!
//! The same round also yields the diagnostics for the previous step: the merit
//! `sum_l g_l(w^k, mu^{k+1}) + n P(w^k)` and the stationarity vector
//! `kappa^k = G(w^k, mu^{k+1}) - G(w^{k-1}, mu^k) + sigma^k (w^{k-1} - w^k)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::penalty::PenaltyConfig;
use crate::smoothloss::validate_tau;
use crate::transport::{RoundMessage, Transport};

/// Relative safety margin applied to the power-iteration estimate.
pub const SPECTRAL_SAFETY: f64 = 1e-6;
pub const POWER_MAX_ITERS: usize = 500;
pub const POWER_TOL: f64 = 1e-10;

/// `sigma^{k+1} = c (k+1)^d`, `mu^{k+1} = beta / (k+1)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    c: f64,
    beta: f64,
    d: f64,
}

impl Schedule {
    pub fn new(c: f64, beta: f64, d: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!("schedule c must be > 0, got {c}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config(format!("schedule beta must be > 0, got {beta}")));
        }
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::config(format!("schedule d must lie in (0,1), got {d}")));
        }
        Ok(Schedule { c, beta, d })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Proximal weight used in round `k`, i.e. `sigma^{k+1}`.
    pub fn sigma_at(&self, k: u64) -> f64 {
        self.c * ((k + 1) as f64).powf(self.d)
    }

    /// Smoothing width used in round `k`, i.e. `mu^{k+1}`.
    pub fn mu_at(&self, k: u64) -> f64 {
        self.beta / ((k + 1) as f64).powf(self.d)
    }

    /// Enforces `beta c >= lambda_max` (or `>= lambda_max / 2` when relaxed).
    pub fn check_spectral(&self, lambda_max: f64, relaxed: bool) -> Result<()> {
        let need = if relaxed { lambda_max / 2.0 } else { lambda_max };
        if self.beta * self.c < need {
            return Err(Error::config(format!(
                "beta*c = {} is below the required {} (lambda_max(X^T X) = {lambda_max}{})",
                self.beta * self.c,
                need,
                if relaxed { ", relaxed /2 form" } else { "" }
            )));
        }
        Ok(())
    }
}

/// How the schedule constant `c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    Explicit(f64),
    /// `c = f * lambda_max(X^T X)`.
    LambdaMaxFraction(f64),
}

impl CMode {
    pub fn resolve(self, lambda_max: f64) -> f64 {
        match self {
            CMode::Explicit(c) => c,
            CMode::LambdaMaxFraction(f) => f * lambda_max,
        }
    }
}

/// Server-side update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Smoothing with decaying `mu` and growing `sigma`.
    Fspg,
    /// Fixed smoothing width and fixed `sigma = 1.01 max(n rho, lambda_max / (2 mu))`.
    Fhpg { mu: f64 },
    /// Diminishing-step subgradient descent, `eta_k = eta0 / sqrt(k+1)`;
    /// `eta0` defaults to `1 / lambda_max`.
    Sub { eta0: Option<f64> },
    /// Proximal subgradient with the FSPG `sigma` schedule but no smoothing.
    Fpg,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub penalty: PenaltyConfig,
    pub tau: f64,
    pub c_mode: CMode,
    pub beta: f64,
    pub d: f64,
    pub relax_beta_c: bool,
    pub max_iters: u64,
    pub w0: Option<ModelVector>,
    pub power_seed: u64,
}

impl SolverConfig {
    /// FSPG with `c = lambda_max / 8`, `beta = 4`, `d = 0.5`. That pairing only
    /// meets the relaxed `beta c >= lambda_max / 2` condition, so it is enabled.
    pub fn fspg(penalty: PenaltyConfig, tau: f64) -> Self {
        SolverConfig {
            method: Method::Fspg,
            penalty,
            tau,
            c_mode: CMode::LambdaMaxFraction(0.125),
            beta: 4.0,
            d: 0.5,
            relax_beta_c: true,
            max_iters: 10_000,
            w0: None,
            power_seed: 0,
        }
    }
}

/// Iterate and append-only diagnostic series of one solve.
///
/// `merit_history[k]` belongs to `w^k`; `dw_history[j]` and `kappa_history[j]`
/// belong to the step `w^j -> w^{j+1}`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: ModelVector,
    pub k: u64,
    pub sigma: f64,
    pub mu: f64,
    pub n_total: usize,
    pub spectral_bound: f64,
    pub merit_history: Vec<f64>,
    pub dw_history: Vec<f64>,
    pub kappa_history: Vec<f64>,
    /// Steps where `sigma <= n rho` forced the identity prox.
    pub unpenalized_steps: u64,
}

impl SolverState {
    pub fn new(w: ModelVector, n_total: usize, spectral_bound: f64) -> Self {
        SolverState {
            w,
            k: 0,
            sigma: 0.0,
            mu: 0.0,
            n_total,
            spectral_bound,
            merit_history: Vec::new(),
            dw_history: Vec::new(),
            kappa_history: Vec::new(),
            unpenalized_steps: 0,
        }
    }

    /// Sets `sigma` and `mu` for the coming round.
    pub fn advance(&mut self, sigma: f64, mu: f64) {
        self.sigma = sigma;
        self.mu = mu;
    }

    /// Whether the penalized prox is well posed at the current `sigma`.
    pub fn prox_admissible(&self, penalty: &PenaltyConfig) -> bool {
        self.sigma > self.n_total as f64 * penalty.rho().value()
    }
}

/// Sums per-client vectors in ascending client id. Every id in `expected` must
/// appear exactly once.
pub fn aggregate(grads: &[(u32, Vec<f64>)], expected: &[u32]) -> Result<Vec<f64>> {
    let mut sorted: Vec<&(u32, Vec<f64>)> = grads.iter().collect();
    sorted.sort_by_key(|(id, _)| *id);
    let ids: Vec<u32> = sorted.iter().map(|(id, _)| *id).collect();
    let mut want = expected.to_vec();
    want.sort_unstable();
    if ids != want {
        return Err(Error::protocol(format!(
            "gradients from clients {ids:?}, expected {want:?}"
        )));
    }
    let dim = sorted.first().map_or(0, |(_, g)| g.len());
    let mut sum = vec![0.0; dim];
    for (id, g) in sorted {
        if g.len() != dim {
            return Err(Error::protocol(format!("client {id} sent a gradient of wrong length")));
        }
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x;
        }
    }
    Ok(sum)
}

/// One proximal-gradient update of `w` given the aggregated gradient.
///
/// Returns the new iterate and whether the penalty prox was applied. When
/// `n/sigma` is past the penalty's step limit the coefficients get the identity
/// map instead.
pub fn prox_gradient_update(
    w: &ModelVector,
    grad_sum: &[f64],
    sigma: f64,
    n_total: usize,
    penalty: &PenaltyConfig,
) -> Result<(ModelVector, bool)> {
    if grad_sum.len() != w.len() {
        return Err(Error::protocol(format!(
            "aggregated gradient has length {}, model has {}",
            grad_sum.len(),
            w.len()
        )));
    }
    let t = n_total as f64 / sigma;
    let admissible = penalty.prox_step_limit().is_none_or(|lim| t < lim);
    let p = w.n_features();
    let mut next = Vec::with_capacity(w.len());
    for (j, (&wj, &gj)) in w.as_slice().iter().zip(grad_sum).enumerate() {
        let a = wj - gj / sigma;
        next.push(if j < p && admissible {
            penalty.prox(a, t)?
        } else {
            a
        });
    }
    Ok((ModelVector::from_vec(next)?, admissible))
}

/// Applies one FSPG update in place; `state.sigma` must already hold
/// `sigma^{k+1}`. Appends `||w^{k+1} - w^k||^2` to `dw_history`.
pub fn fspg_step(
    state: &mut SolverState,
    penalty: &PenaltyConfig,
    grads: &[(u32, Vec<f64>)],
    expected: &[u32],
) -> Result<()> {
    let g = aggregate(grads, expected)?;
    let (next, penalized) =
        prox_gradient_update(&state.w, &g, state.sigma, state.n_total, penalty)?;
    if !penalized {
        if state.unpenalized_steps == 0 {
            log::warn!(
                "sigma = {} <= n*rho = {}; skipping the penalty prox until sigma grows",
                state.sigma,
                state.n_total as f64 * penalty.rho().value()
            );
        }
        state.unpenalized_steps += 1;
    }
    state.dw_history.push(next.dist_sq(&state.w));
    state.w = next;
    state.k += 1;
    Ok(())
}

/// `sum_l g_l(w, mu) + n P(w)`, appended to the merit history.
pub fn merit(state: &mut SolverState, penalty: &PenaltyConfig, local_losses: &[f64]) -> f64 {
    let value = local_losses.iter().sum::<f64>()
        + state.n_total as f64 * penalty.total(state.w.coeffs());
    state.merit_history.push(value);
    value
}

/// `||G_new - G_prev + sigma (w_prev - w_new)||`, appended to the kappa history.
pub fn kappa_norm(
    state: &mut SolverState,
    prev_grad_sum: &[f64],
    new_grad_sum: &[f64],
    sigma: f64,
    w_prev: &ModelVector,
) -> f64 {
    let value = new_grad_sum
        .iter()
        .zip(prev_grad_sum)
        .zip(w_prev.as_slice().iter().zip(state.w.as_slice()))
        .map(|((gn, gp), (wp, wn))| {
            let v = gn - gp + sigma * (wp - wn);
            v * v
        })
        .sum::<f64>()
        .sqrt();
    state.kappa_history.push(value);
    value
}

/// Subgradient step `w - eta (G + n dP(w))`; the intercept is unpenalized.
pub fn sub_step(
    state: &mut SolverState,
    penalty: &PenaltyConfig,
    grads: &[(u32, Vec<f64>)],
    expected: &[u32],
    eta: f64,
) -> Result<()> {
    let g = aggregate(grads, expected)?;
    let p = state.w.n_features();
    let n = state.n_total as f64;
    let next: Vec<f64> = state
        .w
        .as_slice()
        .iter()
        .zip(&g)
        .enumerate()
        .map(|(j, (&wj, &gj))| {
            let pen = if j < p { n * penalty.subgradient(wj) } else { 0.0 };
            wj - eta * (gj + pen)
        })
        .collect();
    let next = ModelVector::from_vec(next)?;
    state.dw_history.push(next.dist_sq(&state.w));
    state.w = next;
    state.k += 1;
    Ok(())
}

/// Constant `sigma` for the fixed-smoothing baseline.
pub fn fhpg_sigma(n_total: usize, rho: f64, lambda_max: f64, mu: f64) -> f64 {
    1.01 * (n_total as f64 * rho).max(lambda_max / (2.0 * mu))
}

fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Largest eigenvalue of the pooled `X^T X` by power iteration over Gram-vector
/// rounds. Stops when the Rayleigh quotient changes by less than `tol`
/// relatively, or after `max_iters` rounds.
pub fn power_iteration(
    transport: &mut dyn Transport,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<f64> {
    let clients = transport.clients().to_vec();
    let first = clients
        .first()
        .ok_or_else(|| Error::protocol("power iteration needs at least one client"))?;
    let dim = first.n_features as usize + 1;
    let ids: Vec<u32> = clients.iter().map(|c| c.client_id).collect();
    let mut v = random_unit(dim, seed);
    let mut rq_prev = f64::NAN;
    let mut rq = 0.0;
    for round in 0..max_iters {
        let replies = transport.run_round(&RoundMessage::GramVecRequest {
            round: round as u64,
            v: v.clone(),
        })?;
        let products: Vec<(u32, Vec<f64>)> = replies
            .into_iter()
            .map(|r| match r {
                RoundMessage::GramVecResponse {
                    client_id, product, ..
                } => Ok((client_id, product)),
                other => Err(Error::protocol(format!("unexpected {}", other.kind()))),
            })
            .collect::<Result<_>>()?;
        let u = aggregate(&products, &ids)?;
        rq = v.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        if (rq - rq_prev).abs() < tol * rq.abs() {
            break;
        }
        rq_prev = rq;
        v = u.into_iter().map(|x| x / norm).collect();
    }
    Ok(rq)
}

/// Power-iteration estimate of `lambda_max(X^T X)` padded by [`SPECTRAL_SAFETY`].
pub fn spectral_bound(transport: &mut dyn Transport, seed: u64) -> Result<f64> {
    let est = power_iteration(transport, seed, POWER_MAX_ITERS, POWER_TOL)?;
    if !(est > 0.0) {
        return Err(Error::protocol("pooled Gram matrix is zero"));
    }
    Ok(est * (1.0 + SPECTRAL_SAFETY))
}

/// Per-iteration view handed to observers.
#[derive(Debug)]
pub struct IterationRecord<'a> {
    pub k: u64,
    /// `sigma` used in round `k`.
    pub sigma: f64,
    /// Smoothing width used in round `k` (0 for unsmoothed methods).
    pub mu: f64,
    pub merit: f64,
    /// `||w^k - w^{k-1}||^2`, absent at `k = 0`.
    pub dw_sq: Option<f64>,
    /// `||kappa^k||`, absent at `k = 0` and for subgradient descent.
    pub kappa: Option<f64>,
    pub w: &'a ModelVector,
}

/// One failed sufficient-decrease check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentViolation {
    pub k: u64,
    /// `merit^{k+1} - merit^k`.
    pub change: f64,
    /// `-(sigma - n rho) ||dw||^2 + eps`.
    pub bound: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DescentLog {
    pub checked: u64,
    pub violations: Vec<DescentViolation>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: SolverState,
    pub lambda_max: f64,
    pub c: f64,
    pub descent: DescentLog,
}

/// Floating-point slack allowed in the descent check.
pub fn descent_slack(merit: f64) -> f64 {
    1e-8 * (1.0 + merit.abs())
}

fn grad_round(
    transport: &mut dyn Transport,
    k: u64,
    w: &ModelVector,
    mu: f64,
    tau: f64,
) -> Result<(Vec<(u32, Vec<f64>)>, Vec<f64>)> {
    let replies = transport.run_round(&RoundMessage::GradRequest {
        k,
        w: w.as_slice().to_vec(),
        mu,
        tau,
    })?;
    let mut grads = Vec::with_capacity(replies.len());
    let mut losses = Vec::with_capacity(replies.len());
    for r in replies {
        match r {
            RoundMessage::GradResponse {
                client_id,
                gradient,
                local_loss,
                ..
            } => {
                grads.push((client_id, gradient));
                losses.push(local_loss);
            }
            other => return Err(Error::protocol(format!("unexpected {}", other.kind()))),
        }
    }
    Ok((grads, losses))
}

/// Runs `cfg.max_iters` server updates against `transport`, calling `observe`
/// for every iterate `w^0 ..= w^K`, then broadcasts the final model.
pub fn solve(
    transport: &mut dyn Transport,
    cfg: &SolverConfig,
    mut observe: impl FnMut(&IterationRecord<'_>) -> Result<()>,
) -> Result<SolveOutcome> {
    validate_tau(cfg.tau)?;
    let ids: Vec<u32> = transport.clients().iter().map(|c| c.client_id).collect();
    let p = transport
        .clients()
        .first()
        .ok_or_else(|| Error::protocol("no clients registered"))?
        .n_features as usize;
    let n_total = transport.n_total();
    let lambda_max = spectral_bound(transport, cfg.power_seed)?;
    let c = cfg.c_mode.resolve(lambda_max);
    let rho = cfg.penalty.rho().value();
    let nrho = n_total as f64 * rho;

    // (sigma, mu) for round k
    let schedule = Schedule::new(c, cfg.beta, cfg.d)?;
    let round_params: Box<dyn Fn(u64) -> (f64, f64)> = match cfg.method {
        Method::Fspg => {
            schedule.check_spectral(lambda_max, cfg.relax_beta_c)?;
            Box::new(move |k| (schedule.sigma_at(k), schedule.mu_at(k)))
        }
        Method::Fhpg { mu } => {
            if !(mu > 0.0) {
                return Err(Error::config(format!("FHPG mu must be > 0, got {mu}")));
            }
            let sigma = fhpg_sigma(n_total, rho, lambda_max, mu);
            Box::new(move |_| (sigma, mu))
        }
        Method::Fpg => Box::new(move |k| (schedule.sigma_at(k), 0.0)),
        Method::Sub { eta0 } => {
            let eta0 = eta0.unwrap_or(1.0 / lambda_max);
            if !(eta0 > 0.0) {
                return Err(Error::config(format!("SUB eta0 must be > 0, got {eta0}")));
            }
            Box::new(move |k| (eta0 / ((k + 1) as f64).sqrt(), 0.0))
        }
    };
    let is_prox = !matches!(cfg.method, Method::Sub { .. });
    let check_descent = matches!(cfg.method, Method::Fspg | Method::Fhpg { .. });

    let w0 = match &cfg.w0 {
        Some(w) if w.len() != p + 1 => {
            return Err(Error::config(format!(
                "initial model has length {}, data has {} columns",
                w.len(),
                p + 1
            )))
        }
        Some(w) => w.clone(),
        None => ModelVector::zeros(p),
    };
    let mut state = SolverState::new(w0, n_total, lambda_max);
    let mut descent = DescentLog::default();
    // gradient sum, iterate, sigma and prox flag of the previous round
    let mut prev: Option<(Vec<f64>, ModelVector, f64, bool)> = None;

    for k in 0..=cfg.max_iters {
        let (sigma, mu) = round_params(k);
        state.advance(sigma, mu);
        let (grads, losses) = grad_round(transport, k, &state.w, mu, cfg.tau)?;
        let g = aggregate(&grads, &ids)?;
        let m = merit(&mut state, &cfg.penalty, &losses);

        let mut kappa = None;
        if let Some((g_prev, w_prev, sigma_prev, penalized)) = &prev {
            if is_prox {
                kappa = Some(kappa_norm(&mut state, g_prev, &g, *sigma_prev, w_prev));
            }
            if check_descent && *penalized && *sigma_prev > nrho {
                let h = &state.merit_history;
                let before = h[h.len() - 2];
                let change = m - before;
                let dw = *state.dw_history.last().expect("step recorded");
                let bound = -(sigma_prev - nrho) * dw + descent_slack(before);
                descent.checked += 1;
                if change > bound {
                    descent.violations.push(DescentViolation {
                        k: k - 1,
                        change,
                        bound,
                    });
                }
            }
        }
        observe(&IterationRecord {
            k,
            sigma: if is_prox { sigma } else { 0.0 },
            mu,
            merit: m,
            dw_sq: state.dw_history.last().copied().filter(|_| k > 0),
            kappa,
            w: &state.w,
        })?;
        if k == cfg.max_iters {
            break;
        }

        let w_before = state.w.clone();
        let penalized = if is_prox {
            let before = state.unpenalized_steps;
            fspg_step(&mut state, &cfg.penalty, &grads, &ids)?;
            state.unpenalized_steps == before
        } else {
            sub_step(&mut state, &cfg.penalty, &grads, &ids, sigma)?;
            false
        };
        prev = Some((g, w_before, sigma, penalized));
    }
    transport.broadcast(&RoundMessage::FinalModel {
        w: state.w.as_slice().to_vec(),
    })?;
    Ok(SolveOutcome {
        state,
        lambda_max,
        c,
        descent,
    })
}
