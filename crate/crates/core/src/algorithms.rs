//! Round procedures for compressed local SGD.
//!
//! Every round is a transition on `(ServerState, [ClientState])`. Client
//! work inside a round reads a snapshot of the server model and its own
//! state, draws randomness from its own `(seed, client, round)` stream, and
//! returns a message. The server then reduces messages in ascending client
//! order, so results do not depend on how clients are scheduled.

use rand::seq::index;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::compression::{decompress, CompressedMessage, CompressorKind, CompressorSpec, FLOAT_BITS};
use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};
use crate::problems::{FederationProblem, MiniBatchSpec};
use crate::rng::{derive_stream, stream_ids, RngStream};

/// Stable algorithm identifiers used by configs and traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Fedcom,
    Fedcomgate,
    FedgateOpt1,
    FedgateOpt2,
    FedcomgateSampled,
    SparseMemory,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Fedcom => "fedcom",
            Variant::Fedcomgate => "fedcomgate",
            Variant::FedgateOpt1 => "fedgate-opt1",
            Variant::FedgateOpt2 => "fedgate-opt2",
            Variant::FedcomgateSampled => "fedcomgate-sampled",
            Variant::SparseMemory => "sparse-memory",
        }
    }

    pub fn tracks_gradients(&self) -> bool {
        !matches!(self, Variant::Fedcom)
    }
}

/// Error-memory update for the sparsified variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryRule {
    /// `nu' = (displacement + nu) - sent`: keeps exactly what top-k dropped.
    #[default]
    Residual,
    /// `nu' = nu + displacement / m - aggregate`, transcribed literally.
    AsWritten,
}

/// Denominator of the server average under client sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SampledAverage {
    /// Divide by the number of selected clients.
    #[default]
    Selected,
    /// Sum over selected clients, divide by the total client count.
    AllClients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOption {
    /// Clients rebuild the next server model from the broadcast average.
    I,
    /// The server updates and broadcasts its model.
    II,
}

/// Local step-size rules prescribed by the convergence theorems. Each
/// needs the smoothness constant `L` and the compressor distortion `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPreset {
    /// `eta = sqrt(m / (R tau (q + 1))) / (L gamma)`
    FedcomNonconvex,
    /// `eta = 1 / (2 L (q/m + 1) tau gamma)`
    FedcomPl,
    /// `eta = 1 / (2 L (q/m + 1) tau gamma)`
    FedcomConvex,
    /// `eta = sqrt(m / (R tau (q + 1))) / (L gamma)`
    FedcomgateNonconvex,
    /// `eta = 1 / (2 L (q/m + 1) tau gamma)`
    FedcomgatePl,
    /// `eta = 1 / (2 L (q + 1) tau gamma)`
    FedcomgateConvex,
}

impl StepPreset {
    pub fn eta(&self, l: f64, q: f64, m: usize, tau: usize, gamma: f64, rounds: usize) -> f64 {
        let (m, tau) = (m as f64, tau as f64);
        match self {
            StepPreset::FedcomNonconvex | StepPreset::FedcomgateNonconvex => {
                (m / (rounds.max(1) as f64 * tau * (q + 1.0))).sqrt() / (l * gamma)
            }
            StepPreset::FedcomPl | StepPreset::FedcomConvex | StepPreset::FedcomgatePl => {
                1.0 / (2.0 * l * (q / m + 1.0) * tau * gamma)
            }
            StepPreset::FedcomgateConvex => 1.0 / (2.0 * l * (q + 1.0) * tau * gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub variant: Variant,
    /// Local learning rate. Replaced by the preset value when `preset` is set.
    pub eta: f64,
    /// Global learning rate.
    pub gamma: f64,
    /// Local steps per round.
    pub tau: usize,
    pub rounds: usize,
    pub compressor: CompressorKind,
    /// Participation ratio, read only by the sampled variant.
    pub sample_ratio: f64,
    pub batch: MiniBatchSpec,
    pub preset: Option<StepPreset>,
    pub memory_rule: MemoryRule,
    pub sampled_average: SampledAverage,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Fedcomgate,
            eta: 0.01,
            gamma: 1.0,
            tau: 5,
            rounds: 100,
            compressor: CompressorKind::Identity,
            sample_ratio: 1.0,
            batch: MiniBatchSpec::exact(),
            preset: None,
            memory_rule: MemoryRule::Residual,
            sampled_average: SampledAverage::Selected,
        }
    }
}

fn positive_finite(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl AlgoConfig {
    /// Checks settings that do not depend on the problem.
    pub fn validate(&self) -> Result<()> {
        if self.preset.is_none() && !positive_finite(self.eta) {
            return Err(Error::config("algorithm.eta", "must be positive and finite"));
        }
        if !positive_finite(self.gamma) {
            return Err(Error::config("algorithm.gamma", "must be positive and finite"));
        }
        if self.tau == 0 {
            return Err(Error::config("algorithm.tau", "must be at least 1"));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(Error::config(
                "algorithm.sample_ratio",
                format!("must lie in (0, 1], got {}", self.sample_ratio),
            ));
        }
        if self.batch.batch_size == 0 {
            return Err(Error::config("algorithm.batch.batch_size", "must be at least 1"));
        }
        if let crate::problems::NoiseModel::AdditiveGaussian { sigma } = self.batch.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::config(
                    "algorithm.batch.noise.sigma",
                    "must be finite and nonnegative",
                ));
            }
        }
        let is_top_k = matches!(self.compressor, CompressorKind::TopK { .. });
        match self.variant {
            Variant::SparseMemory if !is_top_k => Err(Error::config(
                "algorithm.compressor",
                "sparse-memory requires the top-k compressor",
            )),
            Variant::FedgateOpt1 | Variant::FedgateOpt2
                if self.compressor != CompressorKind::Identity =>
            {
                Err(Error::config(
                    "algorithm.compressor",
                    "fedgate sends uncompressed displacements; use identity",
                ))
            }
            v if is_top_k && v != Variant::SparseMemory => Err(Error::config(
                "algorithm.compressor",
                "top-k is biased and only allowed with sparse-memory",
            )),
            _ => Ok(()),
        }
    }

    /// Number of clients selected per round.
    pub fn participants(&self, m: usize) -> Result<usize> {
        if self.variant != Variant::FedcomgateSampled {
            return Ok(m);
        }
        // Guard against products such as 0.29 * 100 = 28.999999999999996.
        let count = (self.sample_ratio * m as f64 + 1e-9).floor() as usize;
        if count == 0 {
            return Err(Error::config(
                "algorithm.sample_ratio",
                format!("floor({} * {m}) selects no clients", self.sample_ratio),
            ));
        }
        Ok(count.min(m))
    }

    /// Local learning rate after applying the preset, if any.
    pub fn effective_eta(&self, problem: &FederationProblem, q: Option<f64>) -> Result<f64> {
        let Some(preset) = self.preset else {
            return Ok(self.eta);
        };
        let q = q.ok_or_else(|| {
            Error::config("algorithm.preset", "preset needs a distortion constant q")
        })?;
        let eta = preset.eta(
            problem.max_local_smoothness,
            q,
            problem.m,
            self.tau,
            self.gamma,
            self.rounds,
        );
        if !positive_finite(eta) {
            return Err(Error::config("algorithm.preset", "preset produced an invalid eta"));
        }
        Ok(eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w: ModelVector,
    pub round: usize,
}

impl ServerState {
    pub fn new(w: ModelVector) -> Self {
        Self { w, round: 0 }
    }
}

/// Per-client persistent state. Randomness is not stored here: each round
/// derives a fresh stream from `(seed, client, round)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    /// Gradient tracker, zero before the first round.
    pub delta: ModelVector,
    /// Error memory of the sparsified variant.
    pub memory: ModelVector,
    /// Local copy of the server model (FedGATE option I).
    pub mirror: Option<ModelVector>,
}

impl ClientState {
    pub fn new(d: usize) -> Self {
        Self {
            delta: vec![0.0; d],
            memory: vec![0.0; d],
            mirror: None,
        }
    }

    pub fn fleet(m: usize, d: usize, variant: Variant, w0: &[f64]) -> Vec<Self> {
        (0..m)
            .map(|_| {
                let mut c = Self::new(d);
                if variant == Variant::FedgateOpt1 {
                    c.mirror = Some(w0.to_vec());
                }
                c
            })
            .collect()
    }
}

/// Everything a round needs besides mutable state.
pub struct RoundContext<'a> {
    pub problem: &'a FederationProblem,
    pub cfg: &'a AlgoConfig,
    /// Local learning rate in effect (preset already applied).
    pub eta: f64,
    pub compressor: CompressorSpec,
    pub seed: u64,
    pub pool: Option<&'a ThreadPool>,
}

impl<'a> RoundContext<'a> {
    pub fn new(problem: &'a FederationProblem, cfg: &'a AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let compressor = CompressorSpec::new(cfg.compressor, problem.d)?;
        cfg.participants(problem.m)?;
        let q = compressor.resolve_q(seed).ok();
        let eta = cfg.effective_eta(problem, q)?;
        Ok(Self {
            problem,
            cfg,
            eta,
            compressor,
            seed,
            pool: None,
        })
    }

    pub fn with_pool(mut self, pool: Option<&'a ThreadPool>) -> Self {
        self.pool = pool;
        self
    }

    fn client_stream(&self, j: usize, round: usize) -> RngStream {
        derive_stream(self.seed, j as u64, round as u64)
    }

    fn map_clients<T, F>(&self, ids: &[usize], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        match self.pool {
            Some(pool) => pool.install(|| ids.par_iter().map(|&j| f(j)).collect()),
            None => ids.iter().map(|&j| f(j)).collect(),
        }
    }
}

/// What a round produced, in ascending client order.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub server: ServerState,
    pub participants: Vec<usize>,
    /// Vectors each participant handed to its compressor.
    pub uplink_inputs: Vec<ModelVector>,
    pub uplinks: Vec<CompressedMessage>,
    pub downlink_bits: u64,
    /// Server-side average of the decompressed uplinks.
    pub aggregate: ModelVector,
}

impl RoundOutcome {
    pub fn uplink_bits(&self) -> u64 {
        self.uplinks.iter().map(|m| m.bit_size).sum()
    }
}

/// Runs `tau` steps of `w <- w - eta (g_j(w) - correction)` from `w_start`,
/// with a fresh mini-batch each step.
pub fn local_epoch(
    problem: &FederationProblem,
    j: usize,
    w_start: &[f64],
    correction: Option<&[f64]>,
    eta: f64,
    cfg: &AlgoConfig,
    rng: &mut RngStream,
) -> Result<ModelVector> {
    let mut w = w_start.to_vec();
    for _ in 0..cfg.tau {
        let g = problem.stochastic_gradient(j, &w, &cfg.batch, rng)?;
        match correction {
            Some(c) => {
                for ((wi, gi), ci) in w.iter_mut().zip(&g).zip(c) {
                    *wi -= eta * (gi - ci);
                }
            }
            None => linalg::axpy(-eta, &g, &mut w),
        }
    }
    Ok(w)
}

/// Normalized displacement `(w_r - w_tau) / eta`.
pub fn uplink_vector(w_r: &[f64], w_tau: &[f64], eta: f64) -> Result<ModelVector> {
    if !positive_finite(eta) {
        return Err(Error::config("eta", "must be positive and finite"));
    }
    Ok(w_r.iter().zip(w_tau).map(|(a, b)| (a - b) / eta).collect())
}

/// Compresses the normalized displacement of one client.
pub fn client_uplink(
    w_r: &[f64],
    w_tau: &[f64],
    eta: f64,
    compressor: &CompressorSpec,
    rng: &mut RngStream,
) -> Result<CompressedMessage> {
    compressor.compress(&uplink_vector(w_r, w_tau, eta)?, rng)
}

fn broadcast_bits(d: usize, vectors: u64) -> u64 {
    vectors * d as u64 * FLOAT_BITS
}

fn server_step(w: &[f64], step: f64, aggregate: &[f64]) -> ModelVector {
    w.iter().zip(aggregate).map(|(wi, a)| wi - step * a).collect()
}

fn track(delta: &mut [f64], inv_tau: f64, own: &[f64], aggregate: &[f64]) {
    for ((d, o), a) in delta.iter_mut().zip(own).zip(aggregate) {
        *d += inv_tau * (o - a);
    }
}

struct ClientReport {
    input: ModelVector,
    msg: CompressedMessage,
    decoded: ModelVector,
}

/// Local epoch plus compressed uplink for each listed client.
fn compressed_uplinks(
    ctx: &RoundContext<'_>,
    server: &ServerState,
    clients: Option<&[ClientState]>,
    ids: &[usize],
) -> Result<Vec<ClientReport>> {
    let cfg = ctx.cfg;
    ctx.map_clients(ids, |j| {
        let mut rng = ctx.client_stream(j, server.round);
        let correction = clients.map(|c| c[j].delta.as_slice());
        let w_tau = local_epoch(
            ctx.problem,
            j,
            &server.w,
            correction,
            ctx.eta,
            cfg,
            &mut rng,
        )?;
        let input = uplink_vector(&server.w, &w_tau, ctx.eta)?;
        let msg = ctx.compressor.compress(&input, &mut rng)?;
        let decoded = decompress(&msg)?;
        Ok(ClientReport { input, msg, decoded })
    })
}

fn average(reports: &[ClientReport]) -> ModelVector {
    let refs: Vec<&[f64]> = reports.iter().map(|r| r.decoded.as_slice()).collect();
    linalg::mean(&refs)
}

fn finish(
    server: &ServerState,
    step: f64,
    participants: Vec<usize>,
    reports: Vec<ClientReport>,
    aggregate: ModelVector,
    downlink_bits: u64,
) -> RoundOutcome {
    let w = server_step(&server.w, step, &aggregate);
    let (uplink_inputs, uplinks) = reports.into_iter().map(|r| (r.input, r.msg)).unzip();
    RoundOutcome {
        server: ServerState {
            w,
            round: server.round + 1,
        },
        participants,
        uplink_inputs,
        uplinks,
        downlink_bits,
        aggregate,
    }
}

/// FedCOM: local SGD, compressed uplinks, `w' = w - eta gamma mean_j Q(...)`.
pub fn fedcom_round(ctx: &RoundContext<'_>, server: &ServerState) -> Result<RoundOutcome> {
    let ids: Vec<usize> = (0..ctx.problem.m).collect();
    let reports = compressed_uplinks(ctx, server, None, &ids)?;
    let aggregate = average(&reports);
    let step = ctx.eta * ctx.cfg.gamma;
    Ok(finish(
        server,
        step,
        ids,
        reports,
        aggregate,
        broadcast_bits(ctx.problem.d, 1),
    ))
}

/// FedCOMGATE: FedCOM with tracker-corrected local steps. The server
/// broadcasts both the model and the aggregate.
pub fn fedcomgate_round(
    ctx: &RoundContext<'_>,
    server: &ServerState,
    clients: &mut [ClientState],
) -> Result<RoundOutcome> {
    let ids: Vec<usize> = (0..ctx.problem.m).collect();
    let reports = compressed_uplinks(ctx, server, Some(clients), &ids)?;
    let aggregate = average(&reports);
    let inv_tau = 1.0 / ctx.cfg.tau as f64;
    for (j, r) in ids.iter().zip(&reports) {
        track(&mut clients[*j].delta, inv_tau, &r.decoded, &aggregate);
    }
    let step = ctx.eta * ctx.cfg.gamma;
    Ok(finish(
        server,
        step,
        ids,
        reports,
        aggregate,
        broadcast_bits(ctx.problem.d, 2),
    ))
}

/// FedGATE: uncompressed displacements `u_j = w - w_j`, server step
/// `w' = w - gamma mean_j u_j`, tracker `delta_j += (w - u - w_j) / (eta tau)`.
pub fn fedgate_round(
    ctx: &RoundContext<'_>,
    server: &ServerState,
    clients: &mut [ClientState],
    option: GateOption,
) -> Result<RoundOutcome> {
    let (m, d) = (ctx.problem.m, ctx.problem.d);
    let cfg = ctx.cfg;
    let ids: Vec<usize> = (0..m).collect();
    let starts: Vec<ModelVector> = match option {
        GateOption::II => vec![server.w.clone(); m],
        GateOption::I => clients
            .iter()
            .map(|c| {
                c.mirror.clone().ok_or_else(|| {
                    Error::config("clients", "option I needs mirrored server models")
                })
            })
            .collect::<Result<_>>()?,
    };
    let snapshot: &[ClientState] = clients;
    let results = ctx.map_clients(&ids, |j| {
        let mut rng = ctx.client_stream(j, server.round);
        let w_start = starts[j].as_slice();
        let w_tau = local_epoch(
            ctx.problem,
            j,
            w_start,
            Some(&snapshot[j].delta),
            ctx.eta,
            cfg,
            &mut rng,
        )?;
        let u = linalg::sub(w_start, &w_tau);
        Ok((u, w_tau))
    })?;
    let refs: Vec<&[f64]> = results.iter().map(|(u, _)| u.as_slice()).collect();
    let u_bar = linalg::mean(&refs);
    let scale = 1.0 / (ctx.eta * cfg.tau as f64);

    let mut next = None;
    for (j, (_, w_tau)) in results.iter().enumerate() {
        let base = &starts[j];
        let mean_model = linalg::sub(base, &u_bar);
        let client = &mut clients[j];
        for ((dl, a), b) in client.delta.iter_mut().zip(&mean_model).zip(w_tau) {
            *dl += scale * (a - b);
        }
        if option == GateOption::I {
            let rebuilt = server_step(base, cfg.gamma, &u_bar);
            if next.is_none() {
                next = Some(rebuilt.clone());
            }
            client.mirror = Some(rebuilt);
        }
    }
    let w = match option {
        GateOption::I => next.expect("at least one client"),
        GateOption::II => server_step(&server.w, cfg.gamma, &u_bar),
    };
    let uplinks = results
        .iter()
        .map(|(u, _)| CompressedMessage::dense(u.clone()))
        .collect();
    let downlink = match option {
        GateOption::I => broadcast_bits(d, 1),
        GateOption::II => broadcast_bits(d, 2),
    };
    Ok(RoundOutcome {
        server: ServerState {
            w,
            round: server.round + 1,
        },
        participants: ids,
        uplink_inputs: results.into_iter().map(|(u, _)| u).collect(),
        uplinks,
        downlink_bits: downlink,
        aggregate: u_bar,
    })
}

/// Uniform selection of `count` of `m` clients without replacement,
/// returned in ascending order.
pub fn select_clients(m: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut chosen = index::sample(rng, m, count).into_vec();
    chosen.sort_unstable();
    chosen
}

/// FedCOMGATE over a sampled subset. Unselected clients keep their
/// trackers unchanged.
pub fn fedcomgate_sampled_round(
    ctx: &RoundContext<'_>,
    server: &ServerState,
    clients: &mut [ClientState],
    rng: &mut RngStream,
) -> Result<RoundOutcome> {
    let m = ctx.problem.m;
    let count = ctx.cfg.participants(m)?;
    let ids = select_clients(m, count, rng);
    let reports = compressed_uplinks(ctx, server, Some(clients), &ids)?;
    let aggregate = match ctx.cfg.sampled_average {
        SampledAverage::Selected => average(&reports),
        SampledAverage::AllClients => {
            let mut sum = vec![0.0; ctx.problem.d];
            for r in &reports {
                linalg::axpy(1.0, &r.decoded, &mut sum);
            }
            sum.iter().map(|v| v / m as f64).collect()
        }
    };
    let inv_tau = 1.0 / ctx.cfg.tau as f64;
    for (j, r) in ids.iter().zip(&reports) {
        track(&mut clients[*j].delta, inv_tau, &r.decoded, &aggregate);
    }
    let step = ctx.eta * ctx.cfg.gamma;
    Ok(finish(
        server,
        step,
        ids,
        reports,
        aggregate,
        broadcast_bits(ctx.problem.d, 2),
    ))
}

/// FedCOMGATE with top-k uplinks and per-client error memory. All vectors
/// are kept in normalized units (displacement divided by `eta`).
pub fn sparse_memory_round(
    ctx: &RoundContext<'_>,
    server: &ServerState,
    clients: &mut [ClientState],
) -> Result<RoundOutcome> {
    if !matches!(ctx.compressor.kind(), CompressorKind::TopK { .. }) {
        return Err(Error::config(
            "algorithm.compressor",
            "sparse-memory requires the top-k compressor",
        ));
    }
    let cfg = ctx.cfg;
    let m = ctx.problem.m;
    let ids: Vec<usize> = (0..m).collect();
    let snapshot: &[ClientState] = clients;
    let reports = ctx.map_clients(&ids, |j| {
        let mut rng = ctx.client_stream(j, server.round);
        let w_tau = local_epoch(
            ctx.problem,
            j,
            &server.w,
            Some(&snapshot[j].delta),
            ctx.eta,
            cfg,
            &mut rng,
        )?;
        let displacement = uplink_vector(&server.w, &w_tau, ctx.eta)?;
        let input: ModelVector = displacement
            .iter()
            .zip(&snapshot[j].memory)
            .map(|(a, b)| a + b)
            .collect();
        let msg = ctx.compressor.compress(&input, &mut rng)?;
        let decoded = decompress(&msg)?;
        Ok((displacement, ClientReport { input, msg, decoded }))
    })?;
    let (displacements, reports): (Vec<_>, Vec<_>) = reports.into_iter().unzip();
    let aggregate = average(&reports);
    let inv_tau = 1.0 / cfg.tau as f64;
    let inv_m = 1.0 / m as f64;
    for ((j, r), disp) in ids.iter().zip(&reports).zip(&displacements) {
        let client = &mut clients[*j];
        track(&mut client.delta, inv_tau, &r.decoded, &aggregate);
        client.memory = match cfg.memory_rule {
            MemoryRule::Residual => linalg::sub(&r.input, &r.decoded),
            MemoryRule::AsWritten => client
                .memory
                .iter()
                .zip(disp)
                .zip(&aggregate)
                .map(|((nu, x), a)| nu + inv_m * x - a)
                .collect(),
        };
    }
    let step = ctx.eta * cfg.gamma;
    Ok(finish(
        server,
        step,
        ids,
        reports,
        aggregate,
        broadcast_bits(ctx.problem.d, 2),
    ))
}

/// Dispatches one round of the configured variant.
pub fn run_round(
    ctx: &RoundContext<'_>,
    server: &ServerState,
    clients: &mut [ClientState],
) -> Result<RoundOutcome> {
    match ctx.cfg.variant {
        Variant::Fedcom => fedcom_round(ctx, server),
        Variant::Fedcomgate => fedcomgate_round(ctx, server, clients),
        Variant::FedgateOpt1 => fedgate_round(ctx, server, clients, GateOption::I),
        Variant::FedgateOpt2 => fedgate_round(ctx, server, clients, GateOption::II),
        Variant::FedcomgateSampled => {
            let mut rng = derive_stream(ctx.seed, stream_ids::SAMPLER, server.round as u64);
            fedcomgate_sampled_round(ctx, server, clients, &mut rng)
        }
        Variant::SparseMemory => sparse_memory_round(ctx, server, clients),
    }
}

/// `||mean_j delta_j|| / max_j ||delta_j||`, zero when every tracker is zero.
pub fn tracker_imbalance(clients: &[ClientState]) -> f64 {
    let refs: Vec<&[f64]> = clients.iter().map(|c| c.delta.as_slice()).collect();
    let mut sum = vec![0.0; refs[0].len()];
    for r in &refs {
        linalg::axpy(1.0, r, &mut sum);
    }
    let mean_norm = linalg::norm(&sum) / clients.len() as f64;
    let max_norm = refs.iter().map(|r| linalg::norm(r)).fold(0.0, f64::max);
    if max_norm == 0.0 {
        0.0
    } else {
        mean_norm / max_norm
    }
}
