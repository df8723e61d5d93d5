//! Result rows, rendered tables and atomic file writes.

use anyhow::{Context, Result};
use ctsim_core::mc_harness::{Coding, PerformanceStats};
use ctsim_core::potential_outcomes::EffectScenario;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Bumped whenever the columns of [`ResultRow`] change.
pub const SCHEMA_VERSION: u32 = 1;

/// One row of `results.csv`: a scenario x target x sample size x coding cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub scenario: String,
    pub target: String,
    pub coding: Coding,
    pub n_units: usize,
    pub n_reps: usize,
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub p_no_effect: f64,
    pub p_cessation: f64,
    pub p_reduction: f64,
    pub p_increase: f64,
    pub magnitude: u32,
    pub mean_true_tau: f64,
    pub tau_true_zero: bool,
    pub bias: f64,
    pub bias_se: f64,
    pub rmse: f64,
    pub rmse_se: f64,
    pub power: f64,
    pub power_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_se: f64,
    pub power_diff: f64,
    pub power_diff_se: f64,
    pub latent_tau: Option<f64>,
    pub latent_bias: Option<f64>,
    pub latent_coverage: Option<f64>,
}

pub fn rows_for_cell(
    scenario: &EffectScenario,
    n_units: usize,
    n_reps: usize,
    n_bootstrap: usize,
    alpha: f64,
    seed: u64,
    stats: &PerformanceStats,
) -> Vec<ResultRow> {
    Coding::ALL
        .iter()
        .map(|&c| {
            let s = stats.coding(c);
            let latent = stats.latent.filter(|_| c == Coding::Sum);
            ResultRow {
                schema_version: SCHEMA_VERSION,
                scenario: scenario.name.clone(),
                target: scenario.target.to_string(),
                coding: c,
                n_units,
                n_reps,
                n_bootstrap,
                alpha,
                seed,
                p_no_effect: scenario.p_s[0],
                p_cessation: scenario.p_s[1],
                p_reduction: scenario.p_s[2],
                p_increase: scenario.p_s[3],
                magnitude: scenario.magnitude,
                mean_true_tau: s.mean_true_tau,
                tau_true_zero: s.tau_true_zero,
                bias: s.bias,
                bias_se: s.mc_se.bias,
                rmse: s.rmse,
                rmse_se: s.mc_se.rmse,
                power: s.power,
                power_se: s.mc_se.power,
                coverage: s.coverage,
                coverage_se: s.mc_se.coverage,
                mean_se: s.mean_se,
                power_diff: stats.power_diff,
                power_diff_se: stats.power_diff_se,
                latent_tau: latent.map(|l| l.mean_tau_latent),
                latent_bias: latent.map(|l| l.bias),
                latent_coverage: latent.map(|l| l.coverage),
            }
        })
        .collect()
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("schema_version") {
        anyhow::bail!(ctsim_core::Error::Version {
            expected: format!("results schema {SCHEMA_VERSION}"),
            found: "a file without a schema_version column".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let version: u32 = rec.get(0).unwrap_or("").parse().unwrap_or(0);
        if version != SCHEMA_VERSION {
            anyhow::bail!(ctsim_core::Error::Version {
                expected: format!("results schema {SCHEMA_VERSION}"),
                found: format!("results schema {}", rec.get(0).unwrap_or("")),
            });
        }
        out.push(rec.deserialize(Some(&headers)).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(out)
}

/// Plot-ready power differences, one row per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: String,
    pub target: String,
    pub n_units: usize,
    pub power_binary: f64,
    pub power_sum: f64,
    pub power_diff: f64,
    pub power_diff_se: f64,
    pub binary_tau_zero: bool,
    pub sum_tau_zero: bool,
}

/// Pairs up the binary and sum rows of each cell, preserving order.
pub fn power_rows(rows: &[ResultRow]) -> Vec<PowerRow> {
    let mut out: Vec<PowerRow> = Vec::new();
    for r in rows.iter().filter(|r| r.coding == Coding::Binary) {
        if let Some(s) = rows.iter().find(|s| {
            s.coding == Coding::Sum && s.scenario == r.scenario && s.target == r.target && s.n_units == r.n_units
        }) {
            out.push(PowerRow {
                scenario: r.scenario.clone(),
                target: r.target.clone(),
                n_units: r.n_units,
                power_binary: r.power,
                power_sum: s.power,
                power_diff: r.power - s.power,
                power_diff_se: r.power_diff_se,
                binary_tau_zero: r.tau_true_zero,
                sum_tau_zero: s.tau_true_zero,
            });
        }
    }
    out
}

pub fn power_csv(rows: &[PowerRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

pub fn flags(p: &PowerRow) -> String {
    let mut f = Vec::new();
    if p.binary_tau_zero {
        f.push("binary τ=0 (type-I rate)");
    }
    if p.sum_tau_zero {
        f.push("sum τ=0 (type-I rate)");
    }
    f.join("; ")
}

/// A simple table that renders as Markdown or as aligned text.
pub struct TextTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for r in &self.rows {
            s.push_str(&format!("| {} |\n", r.join(" | ")));
        }
        s
    }

    pub fn aligned(&self) -> String {
        let n = self.header.len();
        let width: Vec<usize> = (0..n)
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain(std::iter::once(self.header[i].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&width)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(&self.header);
        s.push_str(&line(&width.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>()));
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s
    }
}

fn with_se(v: f64, se: f64) -> String {
    format!("{v:.3} ({se:.3})")
}

/// Performance table: one row per scenario x target x size x coding with
/// true effect, bias, RMSE, power and coverage.
pub fn performance_table(rows: &[ResultRow]) -> TextTable {
    let header = ["Scenario", "Target", "N", "Coding", "True τ", "Bias", "RMSE", "Power", "Coverage"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body = rows
        .iter()
        .map(|r| {
            let power = if r.tau_true_zero {
                format!("{} †", with_se(r.power, r.power_se))
            } else {
                with_se(r.power, r.power_se)
            };
            vec![
                r.scenario.clone(),
                r.target.clone(),
                r.n_units.to_string(),
                r.coding.to_string(),
                format!("{:.4}", r.mean_true_tau),
                with_se(r.bias, r.bias_se),
                with_se(r.rmse, r.rmse_se),
                power,
                with_se(r.coverage, r.coverage_se),
            ]
        })
        .collect();
    TextTable { header, rows: body }
}

pub const TABLE_FOOTNOTE: &str =
    "Monte Carlo bootstrap standard errors in parentheses. † true effect is exactly 0, so power is a type-I error rate.\n";

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
