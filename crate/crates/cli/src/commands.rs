//! Command implementations. Each returns a summary for callers and tests;
//! printing is left to the binary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fedcom_core::compression::CompressorSpec;
use fedcom_core::engine::{run_experiment, ExperimentOutput};
use fedcom_core::metrics::{gq_series, write_csv, write_gq_csv, write_matrix_csv};
use fedcom_core::problems::{make_federation, mean_off_diagonal};
use fedcom_core::repro::{run_figure, Artifact, Figure, Reproduction};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_document, ConfigDocument, ConfigError};

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub workers: usize,
    pub output: Option<PathBuf>,
}

impl Common {
    pub fn document(&self) -> Result<ConfigDocument> {
        let mut doc = load_document(self.config.as_deref(), &self.overrides)?;
        if let Some(out) = &self.output {
            doc.output_path = out.clone();
        }
        Ok(doc)
    }

    fn workers(&self) -> usize {
        self.workers.max(1)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn run_checked(doc: &ConfigDocument, workers: usize) -> Result<ExperimentOutput> {
    let spec = doc.spec();
    spec.validate()?;
    Ok(run_experiment(&spec, workers)?)
}

/// Resolved document as printed by `print-config`.
pub fn print_config(common: &Common) -> Result<String> {
    let doc = common.document()?;
    doc.spec().validate()?;
    Ok(doc.to_pretty_json())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub spec_hash: String,
    pub eta: f64,
    pub rounds: usize,
    pub final_objective: f64,
    pub final_subopt: Option<f64>,
}

/// Runs one experiment and writes `trace.csv`, `spec.json` and `problem.json`.
pub fn cmd_run(common: &Common) -> Result<RunSummary> {
    let doc = common.document()?;
    let out = run_checked(&doc, common.workers())?;
    let dir = doc.output_path.clone();
    create_dir(&dir)?;
    write_csv(create_file(&dir.join("trace.csv"))?, &out.traces)?;
    write_json(
        &dir.join("spec.json"),
        &json!({
            "spec_hash": out.spec_hash,
            "effective_eta": out.eta,
            "config": doc,
        }),
    )?;
    write_json(&dir.join("problem.json"), &out.problem)?;
    let last = out.traces.last();
    Ok(RunSummary {
        output_dir: dir,
        spec_hash: out.spec_hash,
        eta: out.eta,
        rounds: out.traces.len(),
        final_objective: last.map_or(f64::NAN, |t| t.f),
        final_subopt: last.and_then(|t| t.subopt),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Q,
    Gq,
    Heatmap,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSummary {
    Q { q: f64, declared: Option<f64> },
    Gq { series: Vec<(usize, f64)> },
    Heatmap { rows: Vec<Vec<f64>>, mean_off_diagonal: f64 },
}

pub fn cmd_measure(what: Measure, common: &Common) -> Result<MeasureSummary> {
    let doc = common.document()?;
    let dir = doc.output_path.clone();
    match what {
        Measure::Q => {
            let m = &doc.measure;
            if m.q_vectors == 0 || m.q_samples == 0 {
                return Err(ConfigError::new("measure.q_samples", "need at least one vector and one sample").into());
            }
            let spec = CompressorSpec::new(doc.algorithm.compressor, doc.problem.dim)?;
            let q = spec.calibrate_q(m.q_vectors, m.q_samples, doc.seed)?;
            let declared = spec.declared_q();
            create_dir(&dir)?;
            write_json(
                &dir.join("q.json"),
                &json!({
                    "compressor": doc.algorithm.compressor,
                    "dim": doc.problem.dim,
                    "q": q,
                    "declared_q": declared,
                    "vectors": m.q_vectors,
                    "samples": m.q_samples,
                    "seed": doc.seed,
                }),
            )?;
            Ok(MeasureSummary::Q { q, declared })
        }
        Measure::Gq => {
            let mut doc = doc;
            if doc.cadence.gq_every == 0 {
                doc.cadence.gq_every = doc.measure.gq_every;
            }
            if doc.cadence.gq_every == 0 {
                return Err(ConfigError::new("measure.gq_every", "must be at least 1").into());
            }
            let out = run_checked(&doc, common.workers())?;
            let series = gq_series(&out.traces);
            create_dir(&dir)?;
            write_gq_csv(create_file(&dir.join("gq.csv"))?, &series)?;
            Ok(MeasureSummary::Gq { series })
        }
        Measure::Heatmap => {
            doc.problem.validate()?;
            let problem = make_federation(&doc.problem, doc.seed)?;
            let w = match &doc.measure.heatmap_point {
                Some(w) if w.len() != problem.d => {
                    return Err(ConfigError::new(
                        "measure.heatmap_point",
                        format!("has {} entries, problem dimension is {}", w.len(), problem.d),
                    )
                    .into())
                }
                Some(w) => w.clone(),
                None => vec![0.0; problem.d],
            };
            let rows = problem.heterogeneity_matrix(&w)?;
            create_dir(&dir)?;
            write_matrix_csv(create_file(&dir.join("heatmap.csv"))?, &rows)?;
            write_json(&dir.join("problem.json"), &problem)?;
            let mean = mean_off_diagonal(&rows);
            Ok(MeasureSummary::Heatmap {
                rows,
                mean_off_diagonal: mean,
            })
        }
    }
}

/// Runs a built-in reproduction and writes its CSVs and `verdict.json`
/// under `<output>/<figure>/`.
pub fn cmd_repro(figure: &str, output: &Path, workers: usize) -> Result<Reproduction> {
    let figure: Figure = figure.parse()?;
    let rep = run_figure(figure, workers.max(1))?;
    let dir = output.join(figure.name());
    create_dir(&dir)?;
    for artifact in &rep.artifacts {
        let path = dir.join(format!("{}.csv", artifact.name()));
        let file = create_file(&path)?;
        match artifact {
            Artifact::Trace { traces, .. } => write_csv(file, traces)?,
            Artifact::Gq { series, .. } => write_gq_csv(file, series)?,
            Artifact::Matrix { rows, .. } => write_matrix_csv(file, rows)?,
        }
    }
    write_json(
        &dir.join("verdict.json"),
        &json!({
            "figure": figure.name(),
            "verdict": rep.verdict.label(),
            "detail": rep.verdict.detail,
            "max_tracker_imbalance": rep.max_tracker_imbalance,
        }),
    )?;
    Ok(rep)
}
