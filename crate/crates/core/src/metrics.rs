//! Per-round traces and run-level summaries.
//!
//! A trace serializes to one CSV row with the fixed column order
//! `round, f, subopt, grad_norm_sq, uplink_bits, downlink_bits, gq, wall_ms`.
//! Unknown values (`subopt` without a known optimum, `gq` off-cadence) are
//! written as empty fields.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::compression::CompressedMessage;
use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};
use crate::problems::FederationProblem;

pub const CSV_COLUMNS: [&str; 8] = [
    "round",
    "f",
    "subopt",
    "grad_norm_sq",
    "uplink_bits",
    "downlink_bits",
    "gq",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub f: f64,
    pub subopt: Option<f64>,
    pub grad_norm_sq: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub gq: Option<f64>,
    pub wall_ms: f64,
    /// Server model after this round; kept only on the final trace.
    #[serde(skip)]
    pub model: Option<ModelVector>,
}

/// Evaluates the global model `w` after round `round`.
pub fn record_round(
    round: usize,
    w: &[f64],
    uplinks: &[CompressedMessage],
    downlink_bits: u64,
    problem: &FederationProblem,
) -> Result<RoundTrace> {
    let f = problem.objective(w)?;
    let grad = problem.gradient(w)?;
    Ok(RoundTrace {
        round,
        f,
        subopt: problem.global_suboptimality(w)?,
        grad_norm_sq: linalg::norm_sq(&grad),
        uplink_bits: uplinks.iter().map(|m| m.bit_size).sum(),
        downlink_bits,
        gq: None,
        wall_ms: 0.0,
        model: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Slope of `ln(subopt)` per round.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of points used.
    pub points: usize,
    /// Set when the window was cut short by a nonpositive or unknown value.
    pub truncated: bool,
}

/// Least-squares fit of `ln(y)` against `x`.
pub fn fit_log_linear(points: &[(f64, f64)]) -> RateFit {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x, y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    RateFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
        truncated: false,
    }
}

/// Fits `ln(subopt)` against the round index over traces whose index
/// lies in `window`. The window stops at the first nonpositive or unknown
/// suboptimality.
pub fn fit_linear_rate(traces: &[RoundTrace], window: Range<usize>) -> Result<RateFit> {
    let mut points = Vec::new();
    let mut truncated = false;
    for t in traces.iter().filter(|t| window.contains(&t.round)) {
        match t.subopt {
            Some(s) if s > 0.0 => points.push((t.round as f64, s)),
            _ => {
                truncated = true;
                break;
            }
        }
    }
    if points.len() < 10 {
        return Err(Error::config(
            "window",
            format!("need at least 10 positive points, found {}", points.len()),
        ));
    }
    let mut fit = fit_log_linear(&points);
    fit.truncated = truncated;
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitTotals {
    pub uplink: u64,
    pub downlink: u64,
    pub per_round_uplink: f64,
    pub per_round_downlink: f64,
}

pub fn bits_totals(traces: &[RoundTrace]) -> Result<BitTotals> {
    if traces.is_empty() {
        return Err(Error::config("traces", "need at least one round"));
    }
    let uplink: u64 = traces.iter().map(|t| t.uplink_bits).sum();
    let downlink: u64 = traces.iter().map(|t| t.downlink_bits).sum();
    let n = traces.len() as f64;
    Ok(BitTotals {
        uplink,
        downlink,
        per_round_uplink: uplink as f64 / n,
        per_round_downlink: downlink as f64 / n,
    })
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(round, gq)` pairs for every trace that carries a measurement.
pub fn gq_series(traces: &[RoundTrace]) -> Vec<(usize, f64)> {
    traces
        .iter()
        .filter_map(|t| t.gq.map(|g| (t.round, g)))
        .collect()
}

pub fn write_csv<W: Write>(out: W, traces: &[RoundTrace]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for t in traces {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RoundTrace>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::config("csv", "unexpected column layout"));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Writes `(round, gq)` pairs under a `round,gq` header.
pub fn write_gq_csv<W: Write>(out: W, series: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "gq"])?;
    for row in series {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a matrix one row per line, without a header.
pub fn write_matrix_csv<W: Write>(out: W, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
