//! Experiment orchestration.
//!
//! Rounds run strictly in sequence. Within a round, client work may be
//! spread over a worker pool; the reduction order is fixed, so the output
//! is bit-identical for every worker count.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{run_round, tracker_imbalance, AlgoConfig, ClientState, RoundContext, ServerState};
use crate::compression::{measure_gq, CompressorSpec};
use crate::error::{Error, Result};
use crate::linalg::ModelVector;
use crate::metrics::{record_round, RoundTrace};
use crate::problems::{make_federation, Family, FederationProblem, NoiseModel, ProblemSpec};
use crate::rng::{derive_stream, stream_ids};

/// When to take side measurements during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cadence {
    /// Measure G_q every this many rounds; 0 disables it.
    pub gq_every: usize,
    /// Paired compression draws per G_q measurement.
    pub gq_samples: usize,
    /// Fill `wall_ms`. Off by default so traces stay byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for Cadence {
    fn default() -> Self {
        Self {
            gq_every: 0,
            gq_samples: 64,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemSpec,
    pub algorithm: AlgoConfig,
    pub seed: u64,
    pub cadence: Cadence,
}

impl ExperimentSpec {
    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec is always serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Rejects inconsistent settings before any compute happens.
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.algorithm.validate()?;
        CompressorSpec::new(self.algorithm.compressor, self.problem.dim).map_err(|e| match e {
            Error::Config { field, reason } => Error::Config {
                field: format!("algorithm.{field}"),
                reason,
            },
            other => other,
        })?;
        self.algorithm.participants(self.problem.clients)?;
        if self.algorithm.batch.noise == NoiseModel::Subsample {
            if self.problem.family == Family::Quadratic {
                return Err(Error::config(
                    "algorithm.batch.noise",
                    "subsampling needs a sample-based family",
                ));
            }
            if self.algorithm.batch.batch_size > self.problem.samples_per_client {
                return Err(Error::config(
                    "algorithm.batch.batch_size",
                    "exceeds problem.samples_per_client",
                ));
            }
        }
        if self.cadence.gq_every > 0 && self.cadence.gq_samples == 0 {
            return Err(Error::config("cadence.gq_samples", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub spec_hash: String,
    /// Local learning rate actually used.
    pub eta: f64,
    pub traces: Vec<RoundTrace>,
    pub final_model: ModelVector,
    /// Largest `||mean_j delta_j|| / max_j ||delta_j||` seen after any round.
    pub max_tracker_imbalance: f64,
    pub problem: FederationProblem,
}

fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))
}

/// Generates the problem and runs the experiment.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    let problem = make_federation(&spec.problem, spec.seed)?;
    run_on_problem(spec, problem, workers)
}

/// Runs `spec.algorithm` on an existing problem, starting from `w = 0`.
pub fn run_on_problem(
    spec: &ExperimentSpec,
    problem: FederationProblem,
    workers: usize,
) -> Result<ExperimentOutput> {
    spec.algorithm.validate()?;
    let pool = build_pool(workers)?;
    let ctx = RoundContext::new(&problem, &spec.algorithm, spec.seed)?.with_pool(pool.as_ref());
    let cfg: &AlgoConfig = &spec.algorithm;
    let d = problem.d;
    let w0 = vec![0.0; d];
    let mut server = ServerState::new(w0.clone());
    let mut clients = ClientState::fleet(problem.m, d, cfg.variant, &w0);
    let mut traces = Vec::with_capacity(cfg.rounds);
    let mut max_imbalance = 0.0f64;

    for r in 0..cfg.rounds {
        let started = Instant::now();
        let outcome = run_round(&ctx, &server, &mut clients)?;
        if outcome.server.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { round: r });
        }
        let mut trace = record_round(
            r,
            &outcome.server.w,
            &outcome.uplinks,
            outcome.downlink_bits,
            &problem,
        )?;
        if !trace.f.is_finite() {
            return Err(Error::Divergence { round: r });
        }
        let every = spec.cadence.gq_every;
        if every > 0 && r % every == 0 {
            let mut rng = derive_stream(spec.seed, stream_ids::GQ_PROBE, r as u64);
            let refs: Vec<&[f64]> = outcome.uplink_inputs.iter().map(Vec::as_slice).collect();
            trace.gq = Some(measure_gq(
                &ctx.compressor,
                &refs,
                spec.cadence.gq_samples,
                &mut rng,
            )?);
        }
        if cfg.variant.tracks_gradients() {
            max_imbalance = max_imbalance.max(tracker_imbalance(&clients));
        }
        if spec.cadence.record_wall_time {
            trace.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        traces.push(trace);
        server = outcome.server;
    }
    if let Some(last) = traces.last_mut() {
        last.model = Some(server.w.clone());
    }
    Ok(ExperimentOutput {
        spec_hash: spec.hash(),
        eta: ctx.eta,
        traces,
        final_model: server.w,
        max_tracker_imbalance: max_imbalance,
        problem,
    })
}
