//! `mfqcka`: key rates, distance scans, parameter optimization and Monte
//! Carlo validation for multi-field conference key agreement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mfqcka::keyrate::{self, multicast_bound, Objective};
use mfqcka::montecarlo::{compare_to_analytic, run_protocol};
use mfqcka::optimizer::{optimize_with_continuation, scan_distances};
use mfqcka::{ChannelParams, RateReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "mfqcka", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    /// Finite-size rate with the three-intensity decoy estimate (3 users).
    Finite,
    /// Asymptotic rate with the configured decoy intensities.
    AsymptoticDecoy,
    /// Asymptotic rate with exact photon-number statistics.
    AsymptoticExact,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Finite => Objective::Finite,
            ObjectiveArg::AsymptoticDecoy => Objective::AsymptoticDecoy,
            ObjectiveArg::AsymptoticExact => Objective::AsymptoticExact,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the key rate of one configuration.
    Rate {
        config: PathBuf,
        /// Overrides the configured arm length.
        #[arg(long)]
        distance: Option<f64>,
        #[arg(long, value_enum, default_value = "finite")]
        objective: ObjectiveArg,
        /// Print only the repeaterless multicast bound.
        #[arg(long)]
        bound_only: bool,
        /// Also write the result as a one-row CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate or optimize over a range of distances and write CSV.
    Scan {
        config: PathBuf,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        step: f64,
        /// Optimize the source at every distance, warm-starting from the previous one.
        #[arg(long)]
        optimize: bool,
        #[arg(long, value_enum, default_value = "finite")]
        objective: ObjectiveArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize the source settings at one distance.
    Optimize {
        config: PathBuf,
        #[arg(long)]
        distance: Option<f64>,
        #[arg(long, value_enum, default_value = "finite")]
        objective: ObjectiveArg,
        /// Write a configuration with the optimized settings.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the event-level simulation and compare it with the analytic model.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        bins: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the configured dark-count probability.
        #[arg(long)]
        dark_counts: Option<f64>,
        #[arg(long)]
        distance: Option<f64>,
        /// Write the trial summary and z-score report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    text
}

/// `from, from + step, ...` up to `to`, computed without accumulating error.
fn distance_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) {
        return Err(CliError::Range("bounds and step must be finite".into()));
    }
    if !(step > 0.0) {
        return Err(CliError::Range(format!("step {step} must be positive")));
    }
    if to < from || from < 0.0 {
        return Err(CliError::Range(format!("range [{from}, {to}] is empty")));
    }
    let count = ((to - from) / step * (1.0 + 1e-12)).floor() as usize + 1;
    Ok((0..count).map(|i| from + step * i as f64).collect())
}

fn rate(
    config: &Config,
    distance: Option<f64>,
    objective: Objective,
    bound_only: bool,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    if bound_only {
        let mut channel: ChannelParams = config.channel;
        if let Some(d) = distance {
            channel.distance_km = d;
        }
        channel.validate().map_err(CliError::Validation)?;
        println!(
            "{}",
            output::sci(multicast_bound(&channel).unwrap_or(f64::INFINITY))
        );
        return Ok(());
    }
    let bundle = config.bundle(distance)?;
    let report = keyrate::evaluate(&bundle, objective)?;
    print!("{}", to_json(&report));
    if let Some(path) = csv {
        write_file(
            path,
            &output::csv_document(&[report], config.optimizer.seed),
        )?;
    }
    Ok(())
}

fn scan(
    config: &Config,
    grid: &[f64],
    optimize: bool,
    objective: Objective,
    out: &Path,
) -> Result<(), CliError> {
    let bundle = config.bundle(grid.first().copied())?;
    let reports: Vec<RateReport> = if optimize {
        let spec = config.optimizer.spec();
        spec.validate(bundle.num_users())?;
        scan_distances(grid, &spec, objective, &bundle)?
            .into_iter()
            .map(|o| o.report)
            .collect()
    } else {
        grid.par_iter()
            .map(|&d| keyrate::evaluate(&bundle.with_distance(d)?, objective))
            .collect::<mfqcka::Result<_>>()?
    };
    write_file(out, &output::csv_document(&reports, config.optimizer.seed))?;
    for r in &reports {
        println!(
            "L = {} km  R = {}  bound = {}",
            output::sci(r.distance_km),
            output::sci(r.key_rate),
            output::sci(r.multicast_bound.unwrap_or(f64::INFINITY))
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeOutput<'a> {
    report: &'a RateReport,
    evaluations: usize,
}

fn optimize(
    config: &Config,
    distance: Option<f64>,
    objective: Objective,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let bundle = config.bundle(distance)?;
    let spec = config.optimizer.spec();
    spec.validate(bundle.num_users())?;
    let best = optimize_with_continuation(&spec, objective, &bundle)?;
    print!(
        "{}",
        to_json(&OptimizeOutput {
            report: &best.report,
            evaluations: best.evaluations,
        })
    );
    if let Some(path) = out {
        write_file(path, &to_json(&config.with_bundle(&best.bundle)))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    summary: &'a mfqcka::TrialSummary,
    consistency: &'a mfqcka::ConsistencyReport,
}

fn simulate(
    config: &Config,
    bins: u64,
    seed: u64,
    dark_counts: Option<f64>,
    distance: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut bundle = config.bundle(distance)?;
    if let Some(p_d) = dark_counts {
        bundle = bundle
            .with_channel(ChannelParams {
                dark_count_rate: p_d,
                ..*bundle.channel()
            })
            .map_err(CliError::Validation)?;
    }
    if bins == 0 {
        return Err(CliError::Range("--bins must be at least 1".into()));
    }
    let summary = run_protocol(&bundle, bins, seed)?;
    let report = compare_to_analytic(&summary, &bundle)?;
    print!("{}", output::consistency_table(&report));
    println!(
        "sifted per intensity: {:?}; conference errors: {}",
        summary.sifted,
        summary.total_conference_errors()
    );
    if let Some(path) = out {
        write_file(
            path,
            &to_json(&SimulationOutput {
                summary: &summary,
                consistency: &report,
            }),
        )?;
    }
    match report.flagged().count() {
        0 => Ok(()),
        flagged => Err(CliError::Inconsistent { flagged }),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Rate {
            config,
            distance,
            objective,
            bound_only,
            csv,
        } => rate(
            &Config::load(&config)?,
            distance,
            objective.into(),
            bound_only,
            csv.as_deref(),
        ),
        Command::Scan {
            config,
            from,
            to,
            step,
            optimize,
            objective,
            out,
        } => {
            let grid = distance_grid(from, to, step)?;
            scan(
                &Config::load(&config)?,
                &grid,
                optimize,
                objective.into(),
                &out,
            )
        }
        Command::Optimize {
            config,
            distance,
            objective,
            out,
        } => optimize(
            &Config::load(&config)?,
            distance,
            objective.into(),
            out.as_deref(),
        ),
        Command::Simulate {
            config,
            bins,
            seed,
            dark_counts,
            distance,
            out,
        } => simulate(
            &Config::load(&config)?,
            bins,
            seed,
            dark_counts,
            distance,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
