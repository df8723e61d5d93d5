//! Monte Carlo evaluation of outcome codings.
//!
//! Each replication draws control counts, a response-type schedule and a
//! complete randomization, reveals one potential outcome per unit, codes the
//! revealed counts both ways and estimates the effect. Both codings see the
//! same draws. Replication `r` uses a ChaCha8 generator seeded from the
//! config seed on stream `r`, so results do not depend on how replications
//! are scheduled across threads. The bootstrap over replication records uses
//! a separate stream.

use crate::coding::CodedOutcomes;
use crate::error::{Error, Result};
use crate::estimation::{estimate_ols_hc2, reject_null, EstimateResult};
use crate::ingest::EmpiricalResampler;
use crate::matrix::CountMatrix;
use crate::multivariate::{ActSpec, JointSampler, MultiActModel};
use crate::potential_outcomes::{EffectScenario, PotentialOutcomeTable, TargetSet, TrueEstimands};
use crate::stats::{mean, sample_sd};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Stream reserved for the bootstrap generator.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

/// Where control-arm latent counts come from.
#[derive(Debug, Clone)]
pub enum OutcomeSource {
    Parametric(JointSampler),
    Empirical(EmpiricalResampler),
}

impl OutcomeSource {
    pub fn parametric(model: MultiActModel) -> Result<Self> {
        Ok(Self::Parametric(JointSampler::new(model)?))
    }

    pub fn acts(&self) -> &[ActSpec] {
        match self {
            Self::Parametric(s) => &s.model().acts,
            Self::Empirical(r) => r.acts(),
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CountMatrix {
        match self {
            Self::Parametric(s) => s.sample(n, rng),
            Self::Empirical(r) => r.generate(n, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub source: Arc<OutcomeSource>,
    pub scenario: EffectScenario,
    pub n_units: usize,
    pub n_reps: usize,
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Also score the sum coding against the latent-count effect.
    pub latent_diagnostic: bool,
}

impl SimulationConfig {
    pub fn new(source: OutcomeSource, scenario: EffectScenario, n_units: usize, seed: u64) -> Self {
        Self {
            source: Arc::new(source),
            scenario,
            n_units,
            n_reps: 1000,
            n_bootstrap: 100,
            alpha: 0.05,
            seed,
            latent_diagnostic: false,
        }
    }

    pub fn from_model(model: MultiActModel, scenario: EffectScenario, n_units: usize, seed: u64) -> Result<Self> {
        Ok(Self::new(OutcomeSource::parametric(model)?, scenario, n_units, seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reps < 1 {
            return Err(Error::domain("n_reps must be at least 1"));
        }
        if self.n_units < 4 {
            return Err(Error::domain(format!("n_units must be at least 4, got {}", self.n_units)));
        }
        if self.n_bootstrap < 2 {
            return Err(Error::domain("n_bootstrap must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        self.scenario.validate()?;
        self.scenario.target.mask(self.source.acts())?;
        Ok(())
    }

    fn rep_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Binary,
    Sum,
}

impl Coding {
    pub const ALL: [Coding; 2] = [Coding::Binary, Coding::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            Coding::Binary => "binary",
            Coding::Sum => "sum",
        }
    }
}

impl fmt::Display for Coding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingRecord {
    pub tau_hat: f64,
    pub se: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub tau_true: f64,
    pub reject: bool,
    pub covered: bool,
}

impl CodingRecord {
    fn new(est: &EstimateResult, tau_true: f64, alpha: f64) -> Self {
        Self {
            tau_hat: est.tau_hat,
            se: est.se,
            p_value: est.p_value,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            tau_true,
            reject: reject_null(est, alpha),
            covered: est.covers(tau_true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub binary: CodingRecord,
    pub sum: CodingRecord,
    /// Latent-count effect on the sum scale, when requested.
    pub tau_latent: Option<f64>,
}

impl ReplicationRecord {
    pub fn coding(&self, c: Coding) -> &CodingRecord {
        match c {
            Coding::Binary => &self.binary,
            Coding::Sum => &self.sum,
        }
    }
}

/// Average latent-count change per unit, divided by `3K` so it sits on the
/// same scale as the sum coding.
pub fn latent_effect(y0: &CountMatrix, y1: &CountMatrix) -> f64 {
    let total: f64 = y0
        .as_slice()
        .iter()
        .zip(y1.as_slice())
        .map(|(&a, &b)| f64::from(b) - f64::from(a))
        .sum();
    total / (y0.n_rows() as f64 * 3.0 * y0.n_cols() as f64)
}

/// The full schedule and revealed data of one replication.
pub fn replication_table(config: &SimulationConfig, rep: usize) -> Result<PotentialOutcomeTable> {
    let mut rng = config.rep_rng(rep);
    let targeted = config.scenario.target.mask(config.source.acts())?;
    let y0 = config.source.generate(config.n_units, &mut rng);
    PotentialOutcomeTable::generate(y0, &config.scenario, &targeted, &mut rng)
}

/// Estimates both codings from a schedule.
pub fn score_table(table: &PotentialOutcomeTable, alpha: f64, latent: bool, rep: usize) -> Result<ReplicationRecord> {
    let truth: TrueEstimands = table.true_estimands();
    let coded = CodedOutcomes::from_latent(&table.reveal());
    let wrap = |e: Error| Error::Replication {
        rep,
        source: Box::new(e),
    };
    let b = estimate_ols_hc2(&coded.binary, &table.z).map_err(wrap)?;
    let s = estimate_ols_hc2(&coded.sum, &table.z).map_err(wrap)?;
    Ok(ReplicationRecord {
        rep,
        binary: CodingRecord::new(&b, truth.tau_binary, alpha),
        sum: CodingRecord::new(&s, truth.tau_sum, alpha),
        tau_latent: latent.then(|| latent_effect(&table.y0, &table.y1)),
    })
}

/// One replication, deterministic in `(config.seed, rep)`.
pub fn run_replication(config: &SimulationConfig, rep: usize) -> Result<ReplicationRecord> {
    let table = replication_table(config, rep).map_err(|e| Error::Replication {
        rep,
        source: Box::new(e),
    })?;
    score_table(&table, config.alpha, config.latent_diagnostic, rep)
}

/// All replications, in replication order.
pub fn run_replications(config: &SimulationConfig) -> Result<Vec<ReplicationRecord>> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..config.n_reps)
            .into_par_iter()
            .map(|r| run_replication(config, r))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..config.n_reps).map(|r| run_replication(config, r)).collect()
    }
}

/// Point estimates of the performance statistics for one coding.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatValues {
    pub bias: f64,
    pub rmse: f64,
    pub power: f64,
    pub coverage: f64,
}

impl StatValues {
    fn compute<'a>(records: impl Iterator<Item = &'a CodingRecord>) -> Self {
        let (mut n, mut err, mut sq, mut rej, mut cov) = (0usize, 0.0, 0.0, 0usize, 0usize);
        for r in records {
            let e = r.tau_hat - r.tau_true;
            n += 1;
            err += e;
            sq += e * e;
            rej += usize::from(r.reject);
            cov += usize::from(r.covered);
        }
        let m = n as f64;
        Self {
            bias: err / m,
            rmse: (sq / m).sqrt(),
            power: rej as f64 / m,
            coverage: cov as f64 / m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean_tau_latent: f64,
    pub bias: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingStats {
    pub bias: f64,
    pub rmse: f64,
    pub power: f64,
    pub coverage: f64,
    pub mean_true_tau: f64,
    pub mean_se: f64,
    /// The true effect is exactly zero in every replication, so `power` is
    /// a type-I error rate.
    pub tau_true_zero: bool,
    pub mc_se: StatValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceStats {
    pub n_reps: usize,
    pub binary: CodingStats,
    pub sum: CodingStats,
    /// `power(binary) - power(sum)` and its bootstrap SE.
    pub power_diff: f64,
    pub power_diff_se: f64,
    /// Sum coding scored against the latent-count effect.
    pub latent: Option<LatentStats>,
}

impl PerformanceStats {
    pub fn coding(&self, c: Coding) -> &CodingStats {
        match c {
            Coding::Binary => &self.binary,
            Coding::Sum => &self.sum,
        }
    }
}

/// Bootstrap Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct McSe {
    pub binary: StatValues,
    pub sum: StatValues,
    pub power_diff: f64,
}

fn coding_stats(records: &[ReplicationRecord], c: Coding, mc_se: StatValues) -> CodingStats {
    let v = StatValues::compute(records.iter().map(|r| r.coding(c)));
    let m = records.len() as f64;
    CodingStats {
        bias: v.bias,
        rmse: v.rmse,
        power: v.power,
        coverage: v.coverage,
        mean_true_tau: records.iter().map(|r| r.coding(c).tau_true).sum::<f64>() / m,
        mean_se: records.iter().map(|r| r.coding(c).se).sum::<f64>() / m,
        tau_true_zero: records.iter().all(|r| r.coding(c).tau_true == 0.0),
        mc_se,
    }
}

/// Performance statistics with the given Monte Carlo SEs attached.
pub fn summarize_with(records: &[ReplicationRecord], mc_se: McSe) -> Result<PerformanceStats> {
    if records.is_empty() {
        return Err(Error::domain("cannot summarize zero replications"));
    }
    let binary = coding_stats(records, Coding::Binary, mc_se.binary);
    let sum = coding_stats(records, Coding::Sum, mc_se.sum);
    let latent = if records.iter().all(|r| r.tau_latent.is_some()) {
        let errs: Vec<f64> = records.iter().map(|r| r.sum.tau_hat - r.tau_latent.unwrap_or(0.0)).collect();
        let covered = records
            .iter()
            .filter(|r| {
                let t = r.tau_latent.unwrap_or(0.0);
                r.sum.ci_low <= t && t <= r.sum.ci_high
            })
            .count();
        Some(LatentStats {
            mean_tau_latent: mean(&records.iter().map(|r| r.tau_latent.unwrap_or(0.0)).collect::<Vec<_>>()),
            bias: mean(&errs),
            coverage: covered as f64 / records.len() as f64,
        })
    } else {
        None
    };
    Ok(PerformanceStats {
        n_reps: records.len(),
        power_diff: binary.power - sum.power,
        power_diff_se: mc_se.power_diff,
        binary,
        sum,
        latent,
    })
}

/// Performance statistics without Monte Carlo SEs (they are left at zero).
pub fn summarize(records: &[ReplicationRecord]) -> Result<PerformanceStats> {
    summarize_with(records, McSe::default())
}

/// Resamples whole replication records with replacement and reports the
/// standard deviation of each statistic across resamples.
pub fn bootstrap_mc_se<R: Rng + ?Sized>(records: &[ReplicationRecord], n_bootstrap: usize, rng: &mut R) -> Result<McSe> {
    if n_bootstrap < 2 {
        return Err(Error::domain("n_bootstrap must be at least 2"));
    }
    if records.is_empty() {
        return Err(Error::domain("cannot bootstrap zero replications"));
    }
    let m = records.len();
    let mut draws: Vec<(StatValues, StatValues)> = Vec::with_capacity(n_bootstrap);
    let mut idx = vec![0usize; m];
    for _ in 0..n_bootstrap {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..m);
        }
        let b = StatValues::compute(idx.iter().map(|&i| &records[i].binary));
        let s = StatValues::compute(idx.iter().map(|&i| &records[i].sum));
        draws.push((b, s));
    }
    let sd_of = |f: &dyn Fn(&(StatValues, StatValues)) -> f64| sample_sd(&draws.iter().map(f).collect::<Vec<_>>());
    let per = |pick: fn(&(StatValues, StatValues)) -> &StatValues| StatValues {
        bias: sd_of(&|d| pick(d).bias),
        rmse: sd_of(&|d| pick(d).rmse),
        power: sd_of(&|d| pick(d).power),
        coverage: sd_of(&|d| pick(d).coverage),
    };
    Ok(McSe {
        binary: per(|d| &d.0),
        sum: per(|d| &d.1),
        power_diff: sd_of(&|d| d.0.power - d.1.power),
    })
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub records: Vec<ReplicationRecord>,
    pub stats: PerformanceStats,
}

/// Runs all replications, then summarizes with bootstrap SEs.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationResult> {
    let records = run_replications(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(BOOTSTRAP_STREAM);
    let mc_se = bootstrap_mc_se(&records, config.n_bootstrap, &mut rng)?;
    let stats = summarize_with(&records, mc_se)?;
    Ok(SimulationResult { records, stats })
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub scenario: EffectScenario,
    pub target: TargetSet,
    pub result: SimulationResult,
}

/// Evaluates every scenario under every target set. All cells share the
/// base seed.
pub fn scenario_grid(base: &SimulationConfig, scenarios: &[EffectScenario], targets: &[TargetSet]) -> Result<Vec<GridCell>> {
    if scenarios.is_empty() || targets.is_empty() {
        return Err(Error::domain("scenario grid needs at least one scenario and one target"));
    }
    let mut cells = Vec::with_capacity(scenarios.len() * targets.len());
    for target in targets {
        for sc in scenarios {
            let scenario = sc.clone().with_target(target.clone());
            let config = SimulationConfig {
                scenario: scenario.clone(),
                ..base.clone()
            };
            let result = run_simulation(&config)?;
            cells.push(GridCell {
                scenario,
                target: target.clone(),
                result,
            });
        }
    }
    Ok(cells)
}
