//! Survey data ingestion and model calibration.
//!
//! A survey is a comma-separated file with a header row plus a JSON descriptor
//! naming the act columns, whether they hold raw counts or categories
//! `0..=3`, each act's category and severity, and an optional weight column.
//! Rows with any missing act value are dropped and counted.
//!
//! [`fit_model`] fits each act's marginal (censored MLE for categories, exact
//! MLE for counts) and estimates the latent copula correlation pairwise by
//! polychoric maximum likelihood on the 4x4 category cross-tabulation,
//! projected to the nearest valid correlation matrix.

use crate::coding::{categorize, N_CATEGORIES};
use crate::count_models::{
    censored_log_likelihood, fit_censored_with, fit_exact_histogram, CountHistogram, Family, FitOptions, FitStatus,
    MarginalParams, TAIL_MASS,
};
use crate::error::{Error, Result};
use crate::matrix::CountMatrix;
use crate::multivariate::{nearest_psd, ActCategory, ActSpec, MultiActModel, Severity};
use crate::optim::golden_section;
use crate::stats::{bivariate_normal_cdf, chi_square_gof, normal_quantile, ChiSquareTest};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

pub const DESCRIPTOR_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "ctsim-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMode {
    /// Survey categories 0 (never), 1 (once), 2 (2-4 times), 3 (5+ times).
    Categories,
    /// Raw act counts.
    Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActColumn {
    pub column: String,
    #[serde(default)]
    pub label: Option<String>,
    pub category: ActCategory,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDescriptor {
    pub version: u32,
    pub mode: ResponseMode,
    pub acts: Vec<ActColumn>,
    #[serde(default)]
    pub weight_column: Option<String>,
    #[serde(default = "default_missing")]
    pub missing_values: Vec<String>,
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "NA".into(), ".".into()]
}

impl SurveyDescriptor {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let d: Self = serde_json::from_reader(reader)?;
        d.validate()?;
        Ok(d)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(File::open(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DESCRIPTOR_VERSION {
            return Err(Error::Version {
                expected: DESCRIPTOR_VERSION.to_string(),
                found: self.version.to_string(),
            });
        }
        if self.acts.is_empty() {
            return Err(Error::domain("descriptor lists no act columns"));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.acts {
            if !seen.insert(a.column.as_str()) {
                return Err(Error::domain(format!("duplicate act column '{}'", a.column)));
            }
        }
        Ok(())
    }

    pub fn act_specs(&self) -> Vec<ActSpec> {
        self.acts
            .iter()
            .enumerate()
            .map(|(i, a)| {
                ActSpec::new(
                    i + 1,
                    a.label.clone().unwrap_or_else(|| a.column.clone()),
                    a.category,
                    a.severity,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyTable {
    pub descriptor: SurveyDescriptor,
    pub acts: Vec<ActSpec>,
    /// Respondents x acts, as categories or counts per `descriptor.mode`.
    pub rows: CountMatrix,
    pub weights: Option<Vec<f64>>,
    /// Rows removed by listwise deletion.
    pub dropped_rows: usize,
}

impl SurveyTable {
    pub fn mode(&self) -> ResponseMode {
        self.descriptor.mode
    }

    pub fn k(&self) -> usize {
        self.acts.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.n_rows()
    }

    fn weight(&self, row: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[row])
    }

    fn category(&self, row: usize, act: usize) -> u8 {
        let v = self.rows.get(row, act);
        match self.mode() {
            ResponseMode::Categories => v as u8,
            ResponseMode::Counts => categorize(u64::from(v)),
        }
    }

    /// Weighted category frequencies of one act.
    pub fn category_counts(&self, act: usize) -> [f64; N_CATEGORIES] {
        let mut out = [0.0; N_CATEGORIES];
        for i in 0..self.n_rows() {
            out[self.category(i, act) as usize] += self.weight(i);
        }
        out
    }

    fn cross_tab(&self, a: usize, b: usize) -> [[f64; N_CATEGORIES]; N_CATEGORIES] {
        let mut t = [[0.0; N_CATEGORIES]; N_CATEGORIES];
        for i in 0..self.n_rows() {
            t[self.category(i, a) as usize][self.category(i, b) as usize] += self.weight(i);
        }
        t
    }
}

/// Reads a survey file described by `descriptor`.
pub fn read_survey(path: impl AsRef<Path>, descriptor: &SurveyDescriptor) -> Result<SurveyTable> {
    read_survey_from_reader(File::open(path)?, descriptor)
}

pub fn read_survey_from_reader<R: Read>(reader: R, descriptor: &SurveyDescriptor) -> Result<SurveyTable> {
    descriptor.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(&e, 1))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("header has no column '{name}'"),
            })
    };
    let act_cols: Vec<usize> = descriptor.acts.iter().map(|a| find(&a.column)).collect::<Result<_>>()?;
    let weight_col = descriptor.weight_column.as_deref().map(find).transpose()?;

    let mut data: Vec<Vec<u32>> = Vec::new();
    let mut weights = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| parse_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let is_missing = |s: &str| descriptor.missing_values.iter().any(|m| m == s);
        if act_cols.iter().any(|&c| is_missing(&record[c])) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(act_cols.len());
        for (act, &c) in descriptor.acts.iter().zip(&act_cols) {
            let raw = &record[c];
            let v: u32 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column '{}': expected a non-negative integer, found '{raw}'", act.column),
            })?;
            if descriptor.mode == ResponseMode::Categories && v > 3 {
                return Err(Error::Validation {
                    row: line,
                    column: act.column.clone(),
                    message: format!("category {v} is outside 0..=3"),
                });
            }
            row.push(v);
        }
        if let Some(wc) = weight_col {
            let raw = &record[wc];
            let w: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("weight '{raw}' is not a number"),
            })?;
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Validation {
                    row: line,
                    column: headers[wc].to_string(),
                    message: format!("weight must be positive, got {w}"),
                });
            }
            weights.push(w);
        }
        data.push(row);
    }
    let rows = if data.is_empty() {
        CountMatrix::zeros(0, descriptor.acts.len())
    } else {
        CountMatrix::from_rows(&data)
    };
    Ok(SurveyTable {
        descriptor: descriptor.clone(),
        acts: descriptor.act_specs(),
        rows,
        weights: weight_col.map(|_| weights),
        dropped_rows: dropped,
    })
}

fn parse_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes the table back out with the descriptor's column names.
pub fn write_survey_to_writer<W: Write>(table: &SurveyTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.descriptor.acts.iter().map(|a| a.column.as_str()).collect();
    if let (Some(wc), Some(_)) = (&table.descriptor.weight_column, &table.weights) {
        header.push(wc);
    }
    w.write_record(&header)?;
    for i in 0..table.n_rows() {
        let mut rec: Vec<String> = table.rows.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(ws) = &table.weights {
            rec.push(ws[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_survey(table: &SurveyTable, path: impl AsRef<Path>) -> Result<()> {
    write_survey_to_writer(table, File::create(path)?)
}

/// A category-mode survey drawn from `model`, with columns `act01`,
/// `act02`, ... labelled by the model's act labels.
pub fn synthetic_survey<R: Rng + ?Sized>(model: &MultiActModel, n: usize, rng: &mut R) -> Result<SurveyTable> {
    let counts = crate::multivariate::sample_joint(model, n, rng)?;
    let mut rows = CountMatrix::zeros(n, model.k());
    for i in 0..n {
        for a in 0..model.k() {
            rows.set(i, a, u32::from(categorize(u64::from(counts.get(i, a)))));
        }
    }
    let descriptor = SurveyDescriptor {
        version: DESCRIPTOR_VERSION,
        mode: ResponseMode::Categories,
        acts: model
            .acts
            .iter()
            .map(|a| ActColumn {
                column: format!("act{:02}", a.index),
                label: Some(a.label.clone()),
                category: a.category,
                severity: a.severity,
            })
            .collect(),
        weight_column: None,
        missing_values: default_missing(),
    };
    Ok(SurveyTable {
        acts: descriptor.act_specs(),
        descriptor,
        rows,
        weights: None,
        dropped_rows: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActFitReport {
    pub column: String,
    pub params: MarginalParams,
    pub log_likelihood: f64,
    pub status: FitStatus,
    pub weakly_identified: bool,
    /// No positive responses; `theta` is set to 1 and `lambda` is a placeholder.
    pub degenerate: bool,
    pub observed: [f64; N_CATEGORIES],
    pub expected: [f64; N_CATEGORIES],
    pub chi_square: f64,
    pub chi_square_df: usize,
    pub chi_square_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: Family,
    pub mode: ResponseMode,
    pub n_rows: usize,
    pub dropped_rows: usize,
    pub acts: Vec<ActFitReport>,
    /// Smallest eigenvalue of the pairwise estimate before projection.
    pub raw_sigma_min_eigenvalue: f64,
}

impl FitReport {
    pub fn total_log_likelihood(&self) -> f64 {
        self.acts.iter().map(|a| a.log_likelihood).sum()
    }
}

fn placeholder_params(family: Family) -> MarginalParams {
    MarginalParams {
        family,
        lambda: 1.0,
        phi: (family == Family::Zinb).then_some(1.0),
        theta: 1.0,
    }
}

/// Calibrates a multi-act model to a survey table.
pub fn fit_model(table: &SurveyTable, family: Family) -> Result<(MultiActModel, FitReport)> {
    let k = table.k();
    if k < 2 {
        return Err(Error::domain(format!("need at least 2 acts to fit a joint model, got {k}")));
    }
    if table.n_rows() == 0 {
        return Err(Error::domain("survey table has no complete rows"));
    }
    let opts = FitOptions::default();
    let mut margins = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for a in 0..k {
        let observed = table.category_counts(a);
        let fit = match table.mode() {
            ResponseMode::Categories => fit_censored_with(&observed, family, opts),
            ResponseMode::Counts => {
                let hist = CountHistogram::from_weighted(
                    (0..table.n_rows()).map(|i| (u64::from(table.rows.get(i, a)), table.weight(i))),
                );
                fit_exact_histogram(&hist, family, opts)
            }
        };
        let (params, ll, status, weak, degenerate) = match fit {
            Ok(f) => (f.params, f.log_likelihood, f.status, f.weakly_identified, false),
            Err(Error::DegenerateFit { .. }) => (placeholder_params(family), 0.0, FitStatus::Converged, true, true),
            Err(e) => return Err(e),
        };
        let probs = params.category_probs();
        let gof: ChiSquareTest = chi_square_gof(&observed, &probs, params.n_params());
        let total: f64 = observed.iter().sum();
        reports.push(ActFitReport {
            column: table.descriptor.acts[a].column.clone(),
            params,
            log_likelihood: ll,
            status,
            weakly_identified: weak,
            degenerate,
            observed,
            expected: probs.map(|p| p * total),
            chi_square: gof.statistic,
            chi_square_df: gof.df,
            chi_square_p: gof.p_value,
        });
        margins.push(params);
    }

    let mut raw = DMatrix::identity(k, k);
    for a in 0..k {
        for b in 0..a {
            let rho = if reports[a].degenerate || reports[b].degenerate {
                0.0
            } else {
                polychoric(&table.cross_tab(a, b))
            };
            raw[(a, b)] = rho;
            raw[(b, a)] = rho;
        }
    }
    let raw_min = nalgebra::SymmetricEigen::new(raw.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let sigma = nearest_psd(&raw);
    let model = MultiActModel::new(table.acts.clone(), margins, sigma)?;
    let report = FitReport {
        family,
        mode: table.mode(),
        n_rows: table.n_rows(),
        dropped_rows: table.dropped_rows,
        acts: reports,
        raw_sigma_min_eigenvalue: raw_min,
    };
    Ok((model, report))
}

/// Total log-likelihood of a table under a model's margins (categories
/// likelihood for category tables, exact for counts).
pub fn marginal_log_likelihood(table: &SurveyTable, model: &MultiActModel) -> f64 {
    (0..table.k())
        .map(|a| match table.mode() {
            ResponseMode::Categories => censored_log_likelihood(&table.category_counts(a), &model.margins[a]),
            ResponseMode::Counts => CountHistogram::from_weighted(
                (0..table.n_rows()).map(|i| (u64::from(table.rows.get(i, a)), table.weight(i))),
            )
            .log_likelihood(&model.margins[a]),
        })
        .sum()
}

/// Latent normal thresholds from cumulative category proportions.
fn thresholds(margin: &[f64; N_CATEGORIES]) -> [f64; N_CATEGORIES + 1] {
    let total: f64 = margin.iter().sum();
    let mut t = [f64::NEG_INFINITY; N_CATEGORIES + 1];
    let mut cum = 0.0;
    for c in 0..N_CATEGORIES {
        cum += margin[c];
        t[c + 1] = if c + 1 == N_CATEGORIES || cum >= total {
            f64::INFINITY
        } else {
            normal_quantile(cum / total)
        };
    }
    t
}

/// Two-step polychoric correlation of a 4x4 weighted cross-tabulation.
/// Returns 0 when either margin has a single occupied category.
pub fn polychoric(table: &[[f64; N_CATEGORIES]; N_CATEGORIES]) -> f64 {
    let row_margin: [f64; N_CATEGORIES] = std::array::from_fn(|i| table[i].iter().sum());
    let col_margin: [f64; N_CATEGORIES] = std::array::from_fn(|j| table.iter().map(|r| r[j]).sum());
    let occupied = |m: &[f64; N_CATEGORIES]| m.iter().filter(|&&v| v > 0.0).count();
    if occupied(&row_margin) < 2 || occupied(&col_margin) < 2 {
        return 0.0;
    }
    let tr = thresholds(&row_margin);
    let tc = thresholds(&col_margin);
    let nll = |rho: f64| {
        let mut ll = 0.0;
        for i in 0..N_CATEGORIES {
            for j in 0..N_CATEGORIES {
                let n = table[i][j];
                if n <= 0.0 {
                    continue;
                }
                let p = bivariate_normal_cdf(tr[i + 1], tc[j + 1], rho)
                    - bivariate_normal_cdf(tr[i], tc[j + 1], rho)
                    - bivariate_normal_cdf(tr[i + 1], tc[j], rho)
                    + bivariate_normal_cdf(tr[i], tc[j], rho);
                ll += n * p.max(1e-300).ln();
            }
        }
        -ll
    };
    golden_section(nll, -0.999, 0.999, 1e-7)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: MultiActModel,
}

/// Versioned, pretty-printed JSON representation of a model.
pub fn model_to_string(model: &MultiActModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_str(s: &str) -> Result<MultiActModel> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(s)?;
    if header.format != MODEL_FORMAT {
        return Err(Error::Version {
            expected: MODEL_FORMAT.into(),
            found: header.format,
        });
    }
    if header.version != MODEL_VERSION {
        return Err(Error::Version {
            expected: MODEL_VERSION.to_string(),
            found: header.version.to_string(),
        });
    }
    let file: ModelFile = serde_json::from_str(s)?;
    file.model.validate()?;
    Ok(file.model)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<MultiActModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

/// Samples a latent count from one margin's count component restricted to
/// an inclusive interval.
#[derive(Debug, Clone)]
struct IntervalSampler {
    start: u64,
    cum: Vec<f64>,
}

impl IntervalSampler {
    fn new(params: &MarginalParams, lo: u64, hi: Option<u64>) -> Self {
        let mut cum = Vec::new();
        let mut acc = 0.0;
        let mut y = lo;
        loop {
            acc += params.count_pmf(y);
            cum.push(acc);
            let done = match hi {
                Some(h) => y >= h,
                None => y as f64 >= params.lambda && params.count_pmf(y) < TAIL_MASS * acc.max(TAIL_MASS),
            };
            if done || cum.len() >= 100_000 {
                break;
            }
            y += 1;
        }
        Self { start: lo, cum }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let total = *self.cum.last().expect("non-empty interval");
        if !(total > 0.0) {
            return self.start;
        }
        let u = rng.random::<f64>() * total;
        let idx = self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1);
        self.start + idx as u64
    }
}

/// Generates control-arm outcome rows by resampling respondents with
/// replacement, preserving the joint empirical distribution. Category data
/// are converted to latent counts by sampling the fitted count component
/// within each category's interval.
#[derive(Debug, Clone)]
pub struct EmpiricalResampler {
    acts: Vec<ActSpec>,
    mode: ResponseMode,
    rows: CountMatrix,
    cum_weights: Option<Vec<f64>>,
    /// Per act: samplers for categories 2 (2..=4) and 3 (5+).
    imputers: Vec<[IntervalSampler; 2]>,
}

impl EmpiricalResampler {
    pub fn new(table: &SurveyTable, model: &MultiActModel) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::domain("cannot resample an empty table"));
        }
        if model.k() != table.k() {
            return Err(Error::domain(format!(
                "model has {} acts but the table has {}",
                model.k(),
                table.k()
            )));
        }
        let imputers = model
            .margins
            .iter()
            .map(|m| [IntervalSampler::new(m, 2, Some(4)), IntervalSampler::new(m, 5, None)])
            .collect();
        let cum_weights = table.weights.as_ref().map(|w| {
            w.iter()
                .scan(0.0, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect()
        });
        Ok(Self {
            acts: table.acts.clone(),
            mode: table.mode(),
            rows: table.rows.clone(),
            cum_weights,
            imputers,
        })
    }

    pub fn acts(&self) -> &[ActSpec] {
        &self.acts
    }

    fn pick_row<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.cum_weights {
            None => rng.random_range(0..self.rows.n_rows()),
            Some(cum) => {
                let u = rng.random::<f64>() * cum[cum.len() - 1];
                cum.partition_point(|&c| c <= u).min(cum.len() - 1)
            }
        }
    }

    /// Latent count for one observed category of act `a`.
    pub fn impute<R: Rng + ?Sized>(&self, a: usize, category: u8, rng: &mut R) -> u64 {
        match category {
            0 => 0,
            1 => 1,
            2 => self.imputers[a][0].sample(rng),
            _ => self.imputers[a][1].sample(rng),
        }
    }

    /// Resampled rows of observed values (categories or counts).
    pub fn resample_observed<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CountMatrix {
        let k = self.acts.len();
        let mut out = CountMatrix::zeros(n, k);
        for i in 0..n {
            let src = self.pick_row(rng);
            out.row_mut(i).copy_from_slice(self.rows.row(src));
        }
        out
    }

    /// `n` rows of latent counts.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CountMatrix {
        let k = self.acts.len();
        let mut out = CountMatrix::zeros(n, k);
        for i in 0..n {
            let src = self.pick_row(rng);
            for a in 0..k {
                let v = self.rows.get(src, a);
                let latent = match self.mode {
                    ResponseMode::Counts => u64::from(v),
                    ResponseMode::Categories => self.impute(a, v as u8, rng),
                };
                out.set(i, a, u32::try_from(latent).unwrap_or(u32::MAX));
            }
        }
        out
    }
}
