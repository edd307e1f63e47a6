//! Command-line front end for the `fedcom` simulator.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{cmd_measure, cmd_repro, cmd_run, print_config, Common, Measure, MeasureSummary};
use crate::config::ConfigError;

/// Exit status for a successful command.
pub const EXIT_OK: u8 = 0;
/// Exit status for a reproduction whose verdict is FAIL.
pub const EXIT_VERDICT_FAIL: u8 = 1;
/// Exit status for invalid configuration or arguments.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for runtime and numerical failures.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedcom", version, about = "Federated optimization simulator with compressed communication")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config document; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set algorithm.gamma=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for client computation. Never changes results.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output directory; replaces `output_path` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
}

impl From<&CommonArgs> for Common {
    fn from(a: &CommonArgs) -> Self {
        Common {
            config: a.config.clone(),
            overrides: a.overrides.clone(),
            workers: a.workers,
            output: a.output.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write trace.csv, spec.json and problem.json.
    Run,
    /// Measure a compressor or problem quantity.
    Measure {
        #[arg(value_enum)]
        what: MeasureArg,
    },
    /// Run a built-in reproduction: fig1, fig2, fig6 or fig7.
    Repro { figure: String },
    /// Print the fully resolved config document.
    PrintConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    Q,
    Gq,
    Heatmap,
}

/// Exit status for an error returned by a command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<fedcom_core::Error>() {
            return if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

/// Executes a parsed command line, printing results to stdout.
pub fn execute(cli: &Cli) -> Result<u8> {
    let common = Common::from(&cli.common);
    match &cli.command {
        Command::Run => {
            let s = cmd_run(&common)?;
            println!("wrote {} rounds to {}", s.rounds, s.output_dir.display());
            println!("spec_hash {}", s.spec_hash);
            println!("eta {:e}", s.eta);
            match s.final_subopt {
                Some(sub) => println!("final f {:e} subopt {:e}", s.final_objective, sub),
                None => println!("final f {:e}", s.final_objective),
            }
        }
        Command::Measure { what } => {
            let what = match what {
                MeasureArg::Q => Measure::Q,
                MeasureArg::Gq => Measure::Gq,
                MeasureArg::Heatmap => Measure::Heatmap,
            };
            match cmd_measure(what, &common)? {
                MeasureSummary::Q { q, .. } => println!("{q:?}"),
                MeasureSummary::Gq { series } => {
                    for (round, gq) in series {
                        println!("{round} {gq:e}");
                    }
                }
                MeasureSummary::Heatmap {
                    mean_off_diagonal, ..
                } => println!("mean off-diagonal {mean_off_diagonal:?}"),
            }
        }
        Command::Repro { figure } => {
            let out = common.output.clone().unwrap_or_else(|| PathBuf::from("out"));
            let rep = cmd_repro(figure, &out, common.workers)?;
            println!("{}: {} ({})", rep.figure, rep.verdict.label(), rep.verdict.detail);
            if !rep.verdict.pass {
                return Ok(EXIT_VERDICT_FAIL);
            }
        }
        Command::PrintConfig => println!("{}", print_config(&common)?),
    }
    Ok(EXIT_OK)
}
