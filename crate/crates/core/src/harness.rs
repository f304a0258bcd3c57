//! Experiment configs, metric records, the run driver and report files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::client::{ClientDataset, ClientNode};
use crate::coordinator::{self, CMode, Method, SolveOutcome, SolverConfig};
use crate::datagen::{self, GroundTruth, Partition, ScenarioSpec};
use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::transport::{InProcTransport, RoundMessage, SocketTransport, Transport};

pub const DEFAULT_EPS_ACTIVE: f64 = 1e-3;
pub const STANDARD_LAMBDA: f64 = 0.055;
pub const STANDARD_GAMMA_MCP: f64 = 2.4;
pub const STANDARD_GAMMA_SCAD: f64 = 3.1;
pub const REALDATA_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "FSPG")]
    Fspg,
    #[serde(rename = "FHPG")]
    Fhpg,
    #[serde(rename = "SUB")]
    Sub,
    #[serde(rename = "FPG")]
    Fpg,
    /// Every client fits its own data with FSPG; no aggregation.
    #[serde(rename = "NC")]
    Nc,
}

fn default_c_mode() -> CMode {
    CMode::LambdaMaxFraction(0.25)
}
fn default_beta() -> f64 {
    4.0
}
fn default_d() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_c_mode")]
    pub c_mode: CMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    /// Accept `beta c >= lambda_max / 2` instead of `beta c >= lambda_max`.
    #[serde(default)]
    pub relax_beta_c: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            c_mode: default_c_mode(),
            beta: default_beta(),
            d: default_d(),
            relax_beta_c: false,
        }
    }
}

impl ScheduleConfig {
    /// `c = lambda_max / 8`, `beta = 4`, `d = 0.5` with the relaxed condition.
    pub fn standard() -> Self {
        ScheduleConfig {
            c_mode: CMode::LambdaMaxFraction(0.125),
            beta: 4.0,
            d: 0.5,
            relax_beta_c: true,
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}
fn default_response() -> String {
    "y".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Scenario {
        spec: ScenarioSpec,
    },
    /// A named synthetic preset; `tau` and `seed` come from the run config.
    Preset {
        name: String,
    },
    /// Rows are shuffled with the run seed, split into train/test and dealt
    /// round-robin to `clients`.
    Csv {
        path: PathBuf,
        #[serde(default = "default_response")]
        response_column: String,
        clients: usize,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// One headered CSV per client (last column is the response); client ids
    /// follow list order.
    ClientFiles {
        paths: Vec<PathBuf>,
    },
}

fn default_round_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocketClient {
    pub id: u32,
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransportConfig {
    Inproc {
        #[serde(default)]
        threaded: bool,
    },
    /// Clients run `serve-client` with the same data partition the config
    /// describes; the coordinator keeps its own copy only for metrics.
    Socket {
        clients: Vec<SocketClient>,
        #[serde(default = "default_round_timeout")]
        round_timeout_secs: f64,
    },
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig::Inproc { threaded: false }
    }
}

fn default_max_iters() -> u64 {
    10_000
}
fn default_every() -> u64 {
    1
}
fn default_eps_active() -> f64 {
    DEFAULT_EPS_ACTIVE
}
fn default_fhpg_mu() -> f64 {
    1.0
}

/// One experiment, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub tau: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    /// Record metrics every this many iterations (the last iterate is always kept).
    #[serde(default = "default_every")]
    pub diagnostics_every: u64,
    #[serde(default = "default_fhpg_mu")]
    pub fhpg_mu: f64,
    #[serde(default)]
    pub sub_eta0: Option<f64>,
    #[serde(default = "default_eps_active")]
    pub eps_active: f64,
    /// Fill `wall_ns`; off by default so metric files are reproducible.
    #[serde(default)]
    pub timing: bool,
}

/// Standard penalty for `kind` (`lambda = 0.055`, `gamma_MCP = 2.4`, `gamma_SCAD = 3.1`).
pub fn standard_penalty(kind: PenaltyKind) -> PenaltyConfig {
    match kind {
        PenaltyKind::Mcp => PenaltyConfig::mcp(STANDARD_LAMBDA, STANDARD_GAMMA_MCP),
        PenaltyKind::Scad => PenaltyConfig::scad(STANDARD_LAMBDA, STANDARD_GAMMA_SCAD),
        PenaltyKind::L1 => PenaltyConfig::l1(STANDARD_LAMBDA),
        PenaltyKind::None => Ok(PenaltyConfig::none()),
    }
    .expect("standard constants are valid")
}

/// Names accepted by [`preset_scenario`].
pub const PRESETS: [&str; 6] = ["scenario1", "scenario2", "scenario3", "scenario4", "scenario5", "desk"];

/// Synthetic scenario behind a preset name.
pub fn preset_scenario(name: &str, tau: f64, seed: u64) -> Result<ScenarioSpec> {
    let standard = vec![6, 12, 15, 20];
    let spec = match name {
        "scenario1" | "scenario2" | "scenario5" => ScenarioSpec::new(10, 20, 100, tau, standard, seed),
        "scenario4" => ScenarioSpec::new(100, 10, 100, tau, standard, seed),
        "scenario3" => ScenarioSpec::new(10, 10, 20, tau, (2..=6).collect(), seed),
        "desk" => ScenarioSpec::new(10, 5, 30, tau, standard, seed),
        other => {
            return Err(Error::config(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            )))
        }
    };
    Ok(spec)
}

/// Full run config for a preset: standard penalty and schedule, in-process
/// transport, 2000 iterations for `desk` and 10^4 otherwise.
pub fn preset_config(
    name: &str,
    algorithm: Algorithm,
    kind: PenaltyKind,
    tau: f64,
    seed: u64,
) -> Result<RunConfig> {
    if name == "realdata" {
        return Err(Error::config(
            "the realdata preset needs a CSV path; use realdata_config",
        ));
    }
    preset_scenario(name, tau, seed)?;
    Ok(RunConfig {
        algorithm,
        penalty: standard_penalty(kind),
        schedule: ScheduleConfig::standard(),
        tau,
        max_iters: if name == "desk" { 2000 } else { 10_000 },
        seed,
        data: DataConfig::Preset { name: name.into() },
        transport: TransportConfig::default(),
        diagnostics_every: 1,
        fhpg_mu: 1.0,
        sub_eta0: None,
        eps_active: DEFAULT_EPS_ACTIVE,
        timing: false,
    })
}

/// Real-data preset: `lambda = 0.01`, `tau = 0.5`, 10 clients, 80% training rows.
pub fn realdata_config(
    path: PathBuf,
    response_column: &str,
    algorithm: Algorithm,
    kind: PenaltyKind,
    seed: u64,
) -> Result<RunConfig> {
    let penalty = match kind {
        PenaltyKind::Mcp => PenaltyConfig::mcp(REALDATA_LAMBDA, STANDARD_GAMMA_MCP)?,
        PenaltyKind::Scad => PenaltyConfig::scad(REALDATA_LAMBDA, STANDARD_GAMMA_SCAD)?,
        PenaltyKind::L1 => PenaltyConfig::l1(REALDATA_LAMBDA)?,
        PenaltyKind::None => PenaltyConfig::none(),
    };
    Ok(RunConfig {
        algorithm,
        penalty,
        schedule: ScheduleConfig::standard(),
        tau: 0.5,
        max_iters: 10_000,
        seed,
        data: DataConfig::Csv {
            path,
            response_column: response_column.into(),
            clients: 10,
            train_fraction: 0.8,
        },
        transport: TransportConfig::default(),
        diagnostics_every: 1,
        fhpg_mu: 1.0,
        sub_eta0: None,
        eps_active: DEFAULT_EPS_ACTIVE,
        timing: false,
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Static checks; the spectral condition is checked once `lambda_max` is known.
    pub fn validate(&self) -> Result<()> {
        crate::smoothloss::validate_tau(self.tau)?;
        coordinator::Schedule::new(1.0, self.schedule.beta, self.schedule.d)?;
        match self.schedule.c_mode {
            CMode::Explicit(c) | CMode::LambdaMaxFraction(c) if !(c > 0.0 && c.is_finite()) => {
                return Err(Error::config(format!("schedule c must be > 0, got {c}")))
            }
            _ => {}
        }
        if self.diagnostics_every == 0 {
            return Err(Error::config("diagnostics_every must be >= 1"));
        }
        if !(self.eps_active > 0.0) {
            return Err(Error::config("eps_active must be > 0"));
        }
        if self.algorithm == Algorithm::Fhpg && !(self.fhpg_mu > 0.0 && self.fhpg_mu.is_finite()) {
            return Err(Error::config("fhpg_mu must be > 0"));
        }
        if let Some(eta) = self.sub_eta0 {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config("sub_eta0 must be > 0"));
            }
        }
        if let TransportConfig::Socket {
            clients,
            round_timeout_secs,
        } = &self.transport
        {
            if self.algorithm == Algorithm::Nc {
                return Err(Error::config("NC runs are in-process only"));
            }
            if clients.is_empty() {
                return Err(Error::config("socket transport needs at least one client"));
            }
            if !(*round_timeout_secs > 0.0 && round_timeout_secs.is_finite()) {
                return Err(Error::config("round_timeout_secs must be > 0"));
            }
        }
        match &self.data {
            DataConfig::Scenario { spec } => {
                spec.validate()?;
                if spec.tau != self.tau {
                    return Err(Error::config(format!(
                        "scenario tau {} differs from run tau {}",
                        spec.tau, self.tau
                    )));
                }
            }
            DataConfig::Preset { name } => {
                preset_scenario(name, self.tau, self.seed)?.validate()?;
            }
            DataConfig::Csv { clients, train_fraction, .. } => {
                if *clients == 0 {
                    return Err(Error::config("csv source needs clients >= 1"));
                }
                if !(*train_fraction > 0.0 && *train_fraction <= 1.0) {
                    return Err(Error::config("train_fraction must lie in (0,1]"));
                }
            }
            DataConfig::ClientFiles { paths } => {
                if paths.is_empty() {
                    return Err(Error::config("client_files needs at least one path"));
                }
            }
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let method = match self.algorithm {
            Algorithm::Fspg | Algorithm::Nc => Method::Fspg,
            Algorithm::Fhpg => Method::Fhpg { mu: self.fhpg_mu },
            Algorithm::Sub => Method::Sub {
                eta0: self.sub_eta0,
            },
            Algorithm::Fpg => Method::Fpg,
        };
        SolverConfig {
            method,
            penalty: self.penalty,
            tau: self.tau,
            c_mode: self.schedule.c_mode,
            beta: self.schedule.beta,
            d: self.schedule.d,
            relax_beta_c: self.schedule.relax_beta_c,
            max_iters: self.max_iters,
            w0: None,
            power_seed: self.seed,
        }
    }
}

/// Training partition, optional held-out rows and optional generative truth.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Vec<ClientDataset>,
    pub test: Option<ClientDataset>,
    pub truth: Option<GroundTruth>,
}

/// Materializes the data a config describes.
pub fn load_data(cfg: &RunConfig) -> Result<Experiment> {
    match &cfg.data {
        DataConfig::Scenario { spec } => {
            let (train, truth) = datagen::generate_scenario(spec)?;
            Ok(Experiment {
                train,
                test: None,
                truth: Some(truth),
            })
        }
        DataConfig::Preset { name } => {
            let (train, truth) = datagen::generate_scenario(&preset_scenario(name, cfg.tau, cfg.seed)?)?;
            Ok(Experiment {
                train,
                test: None,
                truth: Some(truth),
            })
        }
        DataConfig::Csv {
            path,
            response_column,
            clients,
            train_fraction,
        } => {
            let partition = Partition::Random {
                clients: *clients,
                seed: cfg.seed,
            };
            let (train, test) = datagen::load_csv(path, response_column, partition, *train_fraction)?;
            Ok(Experiment {
                train,
                test: (test.n_samples() > 0).then_some(test),
                truth: None,
            })
        }
        DataConfig::ClientFiles { paths } => {
            let train = paths
                .iter()
                .enumerate()
                .map(|(l, p)| datagen::read_client_csv(p, l as u32))
                .collect::<Result<Vec<_>>>()?;
            Ok(Experiment {
                train,
                test: None,
                truth: None,
            })
        }
    }
}

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub k: u64,
    pub mse_truth: Option<f64>,
    pub mse_pred: Option<f64>,
    pub support_accuracy: Option<f64>,
    pub merit: f64,
    pub dw_sq: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma: f64,
    pub mu: f64,
    pub wall_ns: u64,
}

/// Fraction of the `P` coefficients whose active/inactive label
/// (`|w_p| > eps_active`) agrees with the ground truth.
pub fn support_accuracy(w_hat: &ModelVector, truth: &GroundTruth, eps_active: f64) -> Result<f64> {
    let p = truth.w_star.n_features();
    if w_hat.n_features() != p {
        return Err(Error::config(format!(
            "model has {} coefficients, truth has {p}",
            w_hat.n_features()
        )));
    }
    let hits = w_hat
        .coeffs()
        .iter()
        .enumerate()
        .filter(|&(j, w)| (w.abs() > eps_active) == truth.is_active(j))
        .count();
    Ok(hits as f64 / p as f64)
}

/// `(1/n) sum_i (y_i - x_i^T w)^2` over the given datasets.
pub fn mse_pred(data: &[ClientDataset], w: &ModelVector) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in data {
        let r = d.residuals(w.as_slice())?;
        sum += r.iter().map(|z| z * z).sum::<f64>();
        n += d.n_samples();
    }
    if n == 0 {
        return Err(Error::config("no rows to evaluate"));
    }
    Ok(sum / n as f64)
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub final_model: ModelVector,
    /// One per solve: a single entry, or one per client under NC.
    pub outcomes: Vec<SolveOutcome>,
    pub truth: Option<GroundTruth>,
    /// Messages that reached a client other than the one a transport was built
    /// for. Always zero for NC; recorded so callers can assert it.
    pub cross_client_messages: u64,
}

/// Per-iterate hook for callers that need the whole trajectory.
pub type IterateHook<'a> = dyn FnMut(u64, &ModelVector) + 'a;

struct Recorder<'a> {
    every: u64,
    last: u64,
    eps_active: f64,
    truth: Option<&'a GroundTruth>,
    eval: &'a [ClientDataset],
    start: Option<Instant>,
    records: Vec<MetricsRecord>,
}

impl Recorder<'_> {
    fn observe(&mut self, rec: &coordinator::IterationRecord<'_>) -> Result<()> {
        if rec.k % self.every != 0 && rec.k != self.last {
            return Ok(());
        }
        let (mse_truth, support) = match self.truth {
            Some(t) => (
                Some(rec.w.dist_sq(&t.w_star)),
                Some(support_accuracy(rec.w, t, self.eps_active)?),
            ),
            None => (None, None),
        };
        self.records.push(MetricsRecord {
            k: rec.k,
            mse_truth,
            mse_pred: Some(mse_pred(self.eval, rec.w)?),
            support_accuracy: support,
            merit: rec.merit,
            dw_sq: rec.dw_sq,
            kappa: rec.kappa,
            sigma: rec.sigma,
            mu: rec.mu,
            wall_ns: self.start.map_or(0, |s| s.elapsed().as_nanos() as u64),
        });
        Ok(())
    }
}

fn solve_recorded(
    transport: &mut dyn Transport,
    solver: &SolverConfig,
    cfg: &RunConfig,
    truth: Option<&GroundTruth>,
    eval: &[ClientDataset],
    hook: &mut IterateHook<'_>,
) -> Result<(SolveOutcome, Vec<MetricsRecord>)> {
    let mut rec = Recorder {
        every: cfg.diagnostics_every,
        last: cfg.max_iters,
        eps_active: cfg.eps_active,
        truth,
        eval,
        start: cfg.timing.then(Instant::now),
        records: Vec::new(),
    };
    let outcome = coordinator::solve(transport, solver, |r| {
        hook(r.k, r.w);
        rec.observe(r)
    })?;
    transport.broadcast(&RoundMessage::Shutdown)?;
    Ok((outcome, rec.records))
}

/// Runs `cfg` end to end.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    run_experiment_with(cfg, &mut |_, _| {})
}

/// [`run_experiment`] that also reports every iterate to `hook`.
pub fn run_experiment_with(cfg: &RunConfig, hook: &mut IterateHook<'_>) -> Result<RunOutput> {
    cfg.validate()?;
    let exp = load_data(cfg)?;
    run_on_data(cfg, exp, hook)
}

/// Runs `cfg` on already-materialized data (the config's `data` is ignored).
pub fn run_on_data(cfg: &RunConfig, exp: Experiment, hook: &mut IterateHook<'_>) -> Result<RunOutput> {
    let solver = cfg.solver_config();
    let Experiment { train, test, truth } = exp;
    if cfg.algorithm == Algorithm::Nc {
        return run_nc(cfg, &solver, train, test, truth, hook);
    }
    let eval: Vec<ClientDataset> = match &test {
        Some(t) => vec![t.clone()],
        None => train.clone(),
    };
    let mut transport: Box<dyn Transport> = match &cfg.transport {
        TransportConfig::Inproc { threaded } => Box::new(
            InProcTransport::new(train.into_iter().map(ClientNode::new).collect())?.threaded(*threaded),
        ),
        TransportConfig::Socket {
            clients,
            round_timeout_secs,
        } => {
            let addrs: Vec<(u32, SocketAddr)> = clients.iter().map(|c| (c.id, c.addr)).collect();
            let t = SocketTransport::connect(&addrs, Duration::from_secs_f64(*round_timeout_secs))?;
            check_remote_shapes(t.clients(), &train)?;
            Box::new(t)
        }
    };
    let (outcome, records) =
        solve_recorded(transport.as_mut(), &solver, cfg, truth.as_ref(), &eval, hook)?;
    Ok(RunOutput {
        records,
        final_model: outcome.state.w.clone(),
        outcomes: vec![outcome],
        truth,
        cross_client_messages: 0,
    })
}

fn check_remote_shapes(remote: &[crate::transport::ClientInfo], local: &[ClientDataset]) -> Result<()> {
    let mut local_shapes: Vec<(u32, u64, u64)> = local
        .iter()
        .map(|d| (d.client_id(), d.n_samples() as u64, d.n_features() as u64))
        .collect();
    local_shapes.sort_unstable();
    let remote_shapes: Vec<(u32, u64, u64)> =
        remote.iter().map(|c| (c.client_id, c.n_samples, c.n_features)).collect();
    if local_shapes != remote_shapes {
        return Err(Error::config(format!(
            "remote clients {remote_shapes:?} (id, rows, features) do not match the configured data {local_shapes:?}"
        )));
    }
    Ok(())
}

// L independent single-client FSPG solves; records average the per-client
// metrics at each recorded k, `merit` is summed.
fn run_nc(
    cfg: &RunConfig,
    solver: &SolverConfig,
    train: Vec<ClientDataset>,
    test: Option<ClientDataset>,
    truth: Option<GroundTruth>,
    hook: &mut IterateHook<'_>,
) -> Result<RunOutput> {
    let mut outcomes = Vec::with_capacity(train.len());
    let mut per_client: Vec<Vec<MetricsRecord>> = Vec::with_capacity(train.len());
    let mut cross = 0;
    let l = train.len();
    for data in train {
        let id = data.client_id();
        let eval = match &test {
            Some(t) => vec![t.clone()],
            None => vec![data.clone()],
        };
        let mut t = InProcTransport::new(vec![ClientNode::new(data)])?;
        let (outcome, records) = solve_recorded(&mut t, solver, cfg, truth.as_ref(), &eval, hook)?;
        cross += t
            .traffic()
            .sent
            .iter()
            .chain(t.traffic().received.iter())
            .filter(|(peer, _)| **peer != id)
            .map(|(_, n)| *n)
            .sum::<u64>();
        outcomes.push(outcome);
        per_client.push(records);
    }
    let lf = l as f64;
    let mean = |xs: Vec<Option<f64>>| -> Option<f64> {
        xs.iter().copied().sum::<Option<f64>>().map(|s| s / lf)
    };
    let records = (0..per_client[0].len())
        .map(|i| {
            let at: Vec<&MetricsRecord> = per_client.iter().map(|r| &r[i]).collect();
            MetricsRecord {
                k: at[0].k,
                mse_truth: mean(at.iter().map(|r| r.mse_truth).collect()),
                mse_pred: mean(at.iter().map(|r| r.mse_pred).collect()),
                support_accuracy: mean(at.iter().map(|r| r.support_accuracy).collect()),
                merit: at.iter().map(|r| r.merit).sum(),
                dw_sq: mean(at.iter().map(|r| r.dw_sq).collect()),
                kappa: mean(at.iter().map(|r| r.kappa).collect()),
                sigma: at.iter().map(|r| r.sigma).sum::<f64>() / lf,
                mu: at.iter().map(|r| r.mu).sum::<f64>() / lf,
                wall_ns: at.iter().map(|r| r.wall_ns).max().unwrap_or(0),
            }
        })
        .collect();
    let dim = outcomes[0].state.w.len();
    let mut avg = vec![0.0; dim];
    for o in &outcomes {
        for (a, w) in avg.iter_mut().zip(o.state.w.as_slice()) {
            *a += w / lf;
        }
    }
    Ok(RunOutput {
        records,
        final_model: ModelVector::from_vec(avg)?,
        outcomes,
        truth,
        cross_client_messages: cross,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "metrics.csv",
            ReportFormat::Jsonl => "metrics.jsonl",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Writes `records` to `dir` in `format`; returns the file path.
pub fn write_records(records: &[MetricsRecord], format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    if records.is_empty() {
        return Err(Error::config("no records to write"));
    }
    fs::create_dir_all(dir)?;
    let path = dir.join(format.file_name());
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(&path)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        ReportFormat::Jsonl => {
            let mut w = BufWriter::new(fs::File::create(&path)?);
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(path)
}

/// Reads a file written by [`write_records`].
pub fn read_records(path: &Path, format: ReportFormat) -> Result<Vec<MetricsRecord>> {
    match format {
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            let mut out = Vec::new();
            for rec in r.deserialize() {
                out.push(rec?);
            }
            Ok(out)
        }
        ReportFormat::Jsonl => {
            let mut out = Vec::new();
            for line in BufReader::new(fs::File::open(path)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    out.push(serde_json::from_str(&line)?);
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    pub crate_version: String,
    pub lambda_max: Vec<f64>,
    pub c: Vec<f64>,
    pub descent_checked: u64,
    pub descent_violations: usize,
    pub unpenalized_steps: u64,
    pub cross_client_messages: u64,
}

/// Writes metrics, `final_model.json` and `manifest.json` into `dir`.
pub fn emit_report(cfg: &RunConfig, out: &RunOutput, format: ReportFormat, dir: &Path) -> Result<()> {
    write_records(&out.records, format, dir)?;
    fs::write(
        dir.join("final_model.json"),
        serde_json::to_string_pretty(&out.final_model)? + "\n",
    )?;
    let manifest = Manifest {
        config: cfg.clone(),
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        lambda_max: out.outcomes.iter().map(|o| o.lambda_max).collect(),
        c: out.outcomes.iter().map(|o| o.c).collect(),
        descent_checked: out.outcomes.iter().map(|o| o.descent.checked).sum(),
        descent_violations: out.outcomes.iter().map(|o| o.descent.violations.len()).sum(),
        unpenalized_steps: out.outcomes.iter().map(|o| o.state.unpenalized_steps).sum(),
        cross_client_messages: out.cross_client_messages,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}
