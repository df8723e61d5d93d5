mod config;
mod output;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use config::{resolve, RunConfig};
use ctsim_core::count_models::Family;
use ctsim_core::ingest::{self, fit_model, model_to_string, read_survey, synthetic_survey, SurveyDescriptor};
use ctsim_core::mc_harness::run_simulation;
use ctsim_core::multivariate::default_model;
use output::{
    flags, performance_table, power_csv, power_rows, read_results, results_csv, rows_for_cell, write_atomic, TextTable,
    TABLE_FOOTNOTE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Default size and seed of the bundled example survey.
const EXAMPLE_ROWS: usize = 5000;
const EXAMPLE_SEED: u64 = 20240611;

#[derive(Parser)]
#[command(name = "ctsim", version, about = "Power and bias simulations for binary versus sum codings of multi-item violence outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a multi-act model to a survey file and write a model file.
    Fit {
        /// Comma-separated survey file with a header row.
        #[arg(long)]
        data: PathBuf,
        /// JSON descriptor naming the act columns.
        #[arg(long)]
        descriptor: PathBuf,
        #[arg(long, value_enum, default_value = "zinb")]
        family: FamilyArg,
        /// Where to write the model file.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON fit report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a scenario grid described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's output.dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long, env = "CTSIM_THREADS")]
        threads: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare binary and sum power across one or more results files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic example survey, its descriptor and its generating model.
    GenerateExample {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = EXAMPLE_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = EXAMPLE_SEED)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Zip,
    Zinb,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Zip => Family::Zip,
            FamilyArg::Zinb => Family::Zinb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
    Txt,
}

/// Errors in what the user asked for, as opposed to failures while doing it.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e).into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            data,
            descriptor,
            family,
            out,
            report,
        } => cmd_fit(&data, &descriptor, family.into(), &out, report.as_deref()),
        Command::Simulate {
            config,
            out_dir,
            threads,
            seed,
        } => cmd_simulate(&config, out_dir, threads, seed),
        Command::Report { results, format, out } => cmd_report(&results, format, out.as_deref()),
        Command::GenerateExample { out_dir, rows, seed } => cmd_generate_example(&out_dir, rows, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn cmd_fit(data: &Path, descriptor: &Path, family: Family, out: &Path, report: Option<&Path>) -> Result<()> {
    if !descriptor.is_file() {
        return Err(UsageError(anyhow::anyhow!("descriptor file {} does not exist", descriptor.display())).into());
    }
    if !data.is_file() {
        return Err(UsageError(anyhow::anyhow!("data file {} does not exist", data.display())).into());
    }
    let d = usage(SurveyDescriptor::read(descriptor).with_context(|| format!("reading {}", descriptor.display())))?;
    let table = read_survey(data, &d).with_context(|| format!("reading {}", data.display()))?;
    let (model, rep) = fit_model(&table, family)?;
    write_atomic(out, model_to_string(&model)?.as_bytes())?;
    if let Some(p) = report {
        write_atomic(p, (serde_json::to_string_pretty(&rep)? + "\n").as_bytes())?;
    }

    let t = TextTable {
        header: ["act", "lambda", "phi", "theta", "logLik", "chi2", "df", "p", "notes"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: rep
            .acts
            .iter()
            .map(|a| {
                let mut notes = Vec::new();
                if a.degenerate {
                    notes.push("degenerate");
                }
                if a.weakly_identified {
                    notes.push("weakly identified");
                }
                vec![
                    a.column.clone(),
                    format!("{:.4}", a.params.lambda),
                    fmt_opt(a.params.phi, 4),
                    format!("{:.4}", a.params.theta),
                    format!("{:.2}", a.log_likelihood),
                    format!("{:.3}", a.chi_square),
                    a.chi_square_df.to_string(),
                    fmt_opt(a.chi_square_p, 4),
                    notes.join(", "),
                ]
            })
            .collect(),
    };
    println!(
        "{} fit to {} rows ({} dropped for missing values); total log-likelihood {:.4}",
        family,
        rep.n_rows,
        rep.dropped_rows,
        rep.total_log_likelihood()
    );
    print!("{}", t.aligned());
    println!("model written to {}", out.display());
    Ok(())
}

fn cmd_simulate(config: &Path, out_dir: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    let text = usage(std::fs::read_to_string(config).with_context(|| format!("reading config {}", config.display())))?;
    let cfg = usage(RunConfig::parse(&text).with_context(|| format!("parsing {}", config.display())))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let out_dir = match out_dir.or_else(|| cfg.output.dir.as_ref().map(|d| base.join(d))) {
        Some(d) => d,
        None => return Err(UsageError(anyhow::anyhow!("no output directory: pass --out-dir or set output.dir")).into()),
    };
    if threads == Some(0) {
        return Err(UsageError(anyhow::anyhow!("--threads must be at least 1")).into());
    }
    // Everything is validated before the first replication runs.
    let run = usage(resolve(&cfg, base, seed))?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            b = b.num_threads(t);
        }
        b.build()?
    };
    let n_threads = pool.current_num_threads();

    let mut rows = Vec::new();
    for cell in &run.cells {
        let c = &cell.config;
        eprintln!("running {} / {} / n={}", c.scenario.name, c.scenario.target, cell.n_units);
        let res = pool.install(|| run_simulation(c))?;
        rows.extend(rows_for_cell(&c.scenario, cell.n_units, c.n_reps, c.n_bootstrap, c.alpha, c.seed, &res.stats));
    }

    let table = performance_table(&rows);
    write_atomic(&out_dir.join("results.csv"), &results_csv(&rows)?)?;
    write_atomic(&out_dir.join("power_long.csv"), &power_csv(&power_rows(&rows))?)?;
    write_atomic(&out_dir.join("table.md"), format!("{}\n{}", table.markdown(), TABLE_FOOTNOTE).as_bytes())?;
    write_atomic(&out_dir.join("table.txt"), format!("{}\n{}", table.aligned(), TABLE_FOOTNOTE).as_bytes())?;

    let log = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config.display().to_string(),
        "config_sha256": format!("{:x}", Sha256::digest(text.as_bytes())),
        "seed": run.seed,
        "model": run.model_description,
        "threads": n_threads,
        "cells": run.cells.len(),
        "results_schema_version": output::SCHEMA_VERSION,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    write_atomic(&out_dir.join("run.json"), (serde_json::to_string_pretty(&log)? + "\n").as_bytes())?;
    print!("{}", table.aligned());
    eprintln!("wrote results to {}", out_dir.display());
    Ok(())
}

fn cmd_report(results: &[PathBuf], format: Format, out: Option<&Path>) -> Result<()> {
    let multi = results.len() > 1;
    let mut power = Vec::new();
    for p in results {
        if !p.is_file() {
            return Err(UsageError(anyhow::anyhow!("results file {} does not exist", p.display())).into());
        }
        let rows = read_results(p)?;
        power.extend(power_rows(&rows).into_iter().map(|r| (p.display().to_string(), r)));
    }
    if power.is_empty() {
        bail!("no complete binary/sum cell pairs found");
    }
    let rendered = match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["source"];
            header.extend([
                "scenario",
                "target",
                "n_units",
                "power_binary",
                "power_sum",
                "power_diff",
                "power_diff_se",
                "flags",
            ]);
            w.write_record(&header)?;
            for (src, r) in &power {
                w.write_record([
                    src.as_str(),
                    &r.scenario,
                    &r.target,
                    &r.n_units.to_string(),
                    &r.power_binary.to_string(),
                    &r.power_sum.to_string(),
                    &r.power_diff.to_string(),
                    &r.power_diff_se.to_string(),
                    &flags(r),
                ])?;
            }
            String::from_utf8(w.into_inner()?)?
        }
        Format::Md | Format::Txt => {
            let mut header = Vec::new();
            if multi {
                header.push("Source".to_string());
            }
            header.extend(
                ["Scenario", "Target", "N", "Power (binary)", "Power (sum)", "Binary − sum", "Flags"]
                    .iter()
                    .map(|s| s.to_string()),
            );
            let rows = power
                .iter()
                .map(|(src, r)| {
                    let mut v = Vec::new();
                    if multi {
                        v.push(src.clone());
                    }
                    v.extend([
                        r.scenario.clone(),
                        r.target.clone(),
                        r.n_units.to_string(),
                        format!("{:.3}", r.power_binary),
                        format!("{:.3}", r.power_sum),
                        format!("{:+.3} ({:.3})", r.power_diff, r.power_diff_se),
                        flags(r),
                    ]);
                    v
                })
                .collect();
            let t = TextTable { header, rows };
            if matches!(format, Format::Md) {
                t.markdown()
            } else {
                t.aligned()
            }
        }
    };
    match out {
        Some(p) => write_atomic(p, rendered.as_bytes()),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn cmd_generate_example(out_dir: &Path, rows: usize, seed: u64) -> Result<()> {
    if rows == 0 {
        return Err(UsageError(anyhow::anyhow!("--rows must be positive")).into());
    }
    let model = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = synthetic_survey(&model, rows, &mut rng)?;
    let mut csv = Vec::new();
    ingest::write_survey_to_writer(&table, &mut csv)?;
    write_atomic(&out_dir.join("survey.csv"), &csv)?;
    write_atomic(
        &out_dir.join("descriptor.json"),
        (serde_json::to_string_pretty(&table.descriptor)? + "\n").as_bytes(),
    )?;
    write_atomic(&out_dir.join("generating_model.json"), model_to_string(&model)?.as_bytes())?;
    println!("wrote {rows} rows (seed {seed}) to {}", out_dir.display());
    Ok(())
}
