//! Zero-inflated Poisson and negative binomial distributions for a single act.
//!
//! A count is a structural zero with probability `theta`; otherwise it is drawn
//! from a Poisson with mean `lambda`, or a negative binomial with mean `lambda`
//! and dispersion `phi` (variance `lambda + lambda^2 / phi`). The same
//! `lambda` therefore means "average rate among violent relationships" under
//! both families.
//!
//! Fitting comes in two flavours: exact counts, and the four interval-censored
//! survey categories `{0}, {1}, {2..=4}, {5..}`.

use crate::coding::N_CATEGORIES;
use crate::error::{Error, Result};
use crate::optim;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Tail mass below which CDF tables are truncated.
pub const TAIL_MASS: f64 = 1e-12;

/// Largest support a CDF table will enumerate.
const MAX_TABLE_LEN: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Zip,
    Zinb,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Zip => "zip",
            Family::Zinb => "zinb",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zip" => Ok(Family::Zip),
            "zinb" => Ok(Family::Zinb),
            other => Err(Error::domain(format!("unknown family '{other}' (expected zip or zinb)"))),
        }
    }
}

/// Parameters of one zero-inflated marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub family: Family,
    /// Mean count among non-structural-zero units.
    pub lambda: f64,
    /// Negative binomial dispersion; `Some` iff `family == Zinb`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Probability of a structural zero.
    pub theta: f64,
}

impl MarginalParams {
    pub fn zip(lambda: f64, theta: f64) -> Result<Self> {
        let p = Self {
            family: Family::Zip,
            lambda,
            phi: None,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zinb(lambda: f64, phi: f64, theta: f64) -> Result<Self> {
        let p = Self {
            family: Family::Zinb,
            lambda,
            phi: Some(phi),
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::domain(format!("lambda must be positive and finite, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::domain(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        match (self.family, self.phi) {
            (Family::Zip, None) => Ok(()),
            (Family::Zip, Some(_)) => Err(Error::domain("phi must be absent for the zip family")),
            (Family::Zinb, Some(phi)) if phi.is_finite() && phi > 0.0 => Ok(()),
            (Family::Zinb, phi) => Err(Error::domain(format!(
                "phi must be positive and finite for the zinb family, got {phi:?}"
            ))),
        }
    }

    /// Number of free parameters.
    pub fn n_params(&self) -> usize {
        match self.family {
            Family::Zip => 2,
            Family::Zinb => 3,
        }
    }

    /// `(1 - theta) * lambda`
    pub fn mean(&self) -> f64 {
        (1.0 - self.theta) * self.lambda
    }

    pub fn variance(&self) -> f64 {
        let count_var = match self.phi {
            Some(phi) => self.lambda + self.lambda * self.lambda / phi,
            None => self.lambda,
        };
        (1.0 - self.theta) * count_var + self.theta * (1.0 - self.theta) * self.lambda * self.lambda
    }

    /// Log mass of the count component (without zero inflation).
    pub fn count_ln_pmf(&self, y: u64) -> f64 {
        let lambda = self.lambda;
        match self.phi {
            None => y as f64 * lambda.ln() - lambda - ln_factorial(y),
            Some(phi) => {
                // ln G(y+phi) - ln G(phi) - y ln(phi+lambda), summed term by
                // term while that is cheap so large phi keeps full precision.
                let rising = if y <= 256 {
                    (0..y).map(|j| ((j as f64 - lambda) / (phi + lambda)).ln_1p()).sum::<f64>()
                } else {
                    ln_gamma(y as f64 + phi) - ln_gamma(phi) - y as f64 * (phi + lambda).ln()
                };
                rising + y as f64 * lambda.ln() - ln_factorial(y) - phi * (lambda / phi).ln_1p()
            }
        }
    }

    pub fn count_pmf(&self, y: u64) -> f64 {
        self.count_ln_pmf(y).exp()
    }

    pub fn pmf(&self, y: u64) -> f64 {
        let count = (1.0 - self.theta) * self.count_pmf(y);
        if y == 0 {
            self.theta + count
        } else {
            count
        }
    }

    pub fn ln_pmf(&self, y: u64) -> f64 {
        if y == 0 {
            self.pmf(0).ln()
        } else {
            (1.0 - self.theta).ln() + self.count_ln_pmf(y)
        }
    }

    pub fn cdf(&self, y: u64) -> f64 {
        (0..=y).map(|v| self.pmf(v)).sum::<f64>().min(1.0)
    }

    /// Probabilities of the four survey categories.
    pub fn category_probs(&self) -> [f64; N_CATEGORIES] {
        let g: Vec<f64> = (0..=4).map(|y| self.count_pmf(y)).collect();
        let keep = 1.0 - self.theta;
        let upper = (1.0 - g.iter().sum::<f64>()).max(0.0);
        [
            self.theta + keep * g[0],
            keep * g[1],
            keep * (g[2] + g[3] + g[4]),
            keep * upper,
        ]
    }

    /// Cumulative table of the full mixture, truncated where the remaining
    /// tail mass is below [`TAIL_MASS`].
    pub fn cdf_table(&self) -> CdfTable {
        let mut cum = Vec::new();
        let mut acc = 0.0;
        let mut y: u64 = 0;
        loop {
            acc += self.pmf(y);
            cum.push(acc.min(1.0));
            if (y as f64 >= self.lambda && 1.0 - acc < TAIL_MASS) || cum.len() >= MAX_TABLE_LEN {
                break;
            }
            y += 1;
        }
        CdfTable { cum }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if rng.random::<f64>() < self.theta {
            return 0;
        }
        let rate = match self.phi {
            None => self.lambda,
            Some(phi) => Gamma::new(phi, self.lambda / phi)
                .expect("validated gamma parameters")
                .sample(rng),
        };
        if rate <= 0.0 {
            return 0;
        }
        Poisson::new(rate).expect("validated poisson rate").sample(rng) as u64
    }
}

/// Precomputed CDF of a marginal, used for generalized-inverse lookups.
#[derive(Debug, Clone)]
pub struct CdfTable {
    cum: Vec<f64>,
}

impl CdfTable {
    /// Smallest `y` with `cdf(y) >= u`; values in the truncated tail map to the
    /// last tabulated point.
    pub fn quantile(&self, u: f64) -> u64 {
        let idx = self.cum.partition_point(|&c| c < u);
        idx.min(self.cum.len() - 1) as u64
    }

    pub fn cdf(&self, y: u64) -> f64 {
        self.cum.get(y as usize).copied().unwrap_or(1.0)
    }

    pub fn max_value(&self) -> u64 {
        self.cum.len() as u64 - 1
    }
}

/// Zero-inflated probability mass at `y`.
pub fn zi_pmf(params: &MarginalParams, y: u64) -> Result<f64> {
    params.validate()?;
    Ok(params.pmf(y))
}

pub fn zi_cdf(params: &MarginalParams, y: u64) -> Result<f64> {
    params.validate()?;
    Ok(params.cdf(y))
}

/// Generalized inverse of the CDF: the smallest `y` with `cdf(y) >= u`.
pub fn zi_quantile(params: &MarginalParams, u: f64) -> Result<u64> {
    params.validate()?;
    if !(0.0..1.0).contains(&u) {
        return Err(Error::domain(format!("quantile level must lie in [0, 1), got {u}")));
    }
    Ok(params.cdf_table().quantile(u))
}

/// Latent act counts for a set of units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSample {
    pub values: Vec<u64>,
}

impl CountSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<u64>() as f64 / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = self.values.len() as f64;
        self.values.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// `n` i.i.d. draws by the two-stage mixture construction.
pub fn zi_sample<R: Rng + ?Sized>(params: &MarginalParams, n: usize, rng: &mut R) -> Result<CountSample> {
    params.validate()?;
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    Ok(CountSample {
        values: (0..n).map(|_| params.draw(rng)).collect(),
    })
}

/// Weighted histogram of exact counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountHistogram {
    cells: BTreeMap<u64, f64>,
}

impl CountHistogram {
    pub fn from_counts(values: &[u64]) -> Self {
        Self::from_weighted(values.iter().map(|&v| (v, 1.0)))
    }

    pub fn from_weighted(pairs: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut cells = BTreeMap::new();
        for (v, w) in pairs {
            *cells.entry(v).or_insert(0.0) += w;
        }
        Self { cells }
    }

    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn zeros(&self) -> f64 {
        self.cells.get(&0).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.cells.iter().map(|(&v, &w)| (v, w))
    }

    /// Weighted log-likelihood of the histogram under `params`.
    pub fn log_likelihood(&self, params: &MarginalParams) -> f64 {
        self.iter().map(|(y, w)| w * params.ln_pmf(y)).sum()
    }
}

/// Interval-censored log-likelihood `sum_c n_c ln P(category c)`.
pub fn censored_log_likelihood(counts: &[f64; N_CATEGORIES], params: &MarginalParams) -> f64 {
    let probs = params.category_probs();
    counts
        .iter()
        .zip(probs)
        .filter(|(&n, _)| n > 0.0)
        .map(|(&n, p)| n * p.ln())
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Convergence is declared once the log-likelihood improves by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    pub params: MarginalParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub status: FitStatus,
    /// Set when `theta > 0.999` or fewer than five positive observations.
    pub weakly_identified: bool,
    pub n_obs: f64,
    pub n_positive: f64,
}

fn identifiability_flag(theta: f64, n_positive: f64) -> bool {
    theta > 0.999 || n_positive < 5.0
}

/// Standard zero-inflation starting values from the mean among positives.
fn starting_values(p0: f64, positive_mean: f64) -> (f64, f64) {
    let lambda0 = positive_mean.max(1e-3);
    let g0 = (-lambda0).exp();
    let theta0 = ((p0 - g0) / (1.0 - g0)).max(0.0);
    (lambda0, theta0)
}

/// Maximum-likelihood fit to exact counts.
pub fn fit_mle_exact(data: &CountSample, family: Family) -> Result<MarginalFit> {
    fit_exact_histogram(&CountHistogram::from_counts(&data.values), family, FitOptions::default())
}

/// Maximum-likelihood fit to a weighted histogram of exact counts.
///
/// ZIP uses EM with closed-form M-steps; ZINB uses quasi-Newton on
/// `(ln lambda, ln phi, logit theta)`, started both from method-of-moments
/// values and from the ZIP solution.
pub fn fit_exact_histogram(hist: &CountHistogram, family: Family, opts: FitOptions) -> Result<MarginalFit> {
    let n = hist.total();
    if n.is_nan() || n <= 0.0 {
        return Err(Error::domain("cannot fit an empty sample"));
    }
    let n0 = hist.zeros();
    let n_pos = n - n0;
    if n_pos <= 0.0 {
        return Err(Error::DegenerateFit { n_obs: n });
    }
    let zip = fit_zip_em(hist, opts);
    match family {
        Family::Zip => Ok(zip),
        Family::Zinb => {
            let sum: f64 = hist.iter().map(|(y, w)| y as f64 * w).sum();
            let pos_mean = sum / n_pos;
            let pos_var = hist
                .iter()
                .filter(|&(y, _)| y > 0)
                .map(|(y, w)| w * (y as f64 - pos_mean).powi(2))
                .sum::<f64>()
                / n_pos;
            let phi_mom = if pos_var > pos_mean {
                pos_mean * pos_mean / (pos_var - pos_mean)
            } else {
                10.0
            };
            let (l0, t0) = starting_values(n0 / n, pos_mean);
            let starts = [
                [l0, phi_mom, t0.clamp(1e-4, 0.999)],
                [zip.params.lambda, 1e4, zip.params.theta.clamp(1e-6, 1.0 - 1e-9)],
            ];
            let nll = |x: &[f64]| {
                let p = zinb_from_free(x);
                -hist.log_likelihood(&p)
            };
            let best = best_of_starts(&starts, nll, opts);
            let params = zinb_from_free(&best.x);
            Ok(MarginalFit {
                params,
                log_likelihood: -best.value,
                iterations: best.iterations,
                status: status(best.converged),
                weakly_identified: identifiability_flag(params.theta, n_pos),
                n_obs: n,
                n_positive: n_pos,
            })
        }
    }
}

fn fit_zip_em(hist: &CountHistogram, opts: FitOptions) -> MarginalFit {
    let n = hist.total();
    let n0 = hist.zeros();
    let sum: f64 = hist.iter().map(|(y, w)| y as f64 * w).sum();
    let (mut lambda, theta0) = starting_values(n0 / n, sum / (n - n0));
    // EM cannot leave theta = 0 once there, so keep a small positive start
    // whenever zeros are observed.
    let mut theta = if n0 > 0.0 { theta0.max(1e-3) } else { 0.0 };

    let ll_of = |lambda: f64, theta: f64| {
        let p0 = theta + (1.0 - theta) * (-lambda).exp();
        let mut ll = if n0 > 0.0 { n0 * p0.ln() } else { 0.0 };
        ll += (n - n0) * (1.0 - theta).ln() + sum * lambda.ln() - (n - n0) * lambda;
        ll - hist.iter().map(|(y, w)| w * ln_factorial(y)).sum::<f64>()
    };

    let mut ll = ll_of(lambda, theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let p0 = theta + (1.0 - theta) * (-lambda).exp();
        let structural = if p0 > 0.0 { n0 * theta / p0 } else { 0.0 };
        theta = structural / n;
        lambda = sum / (n - structural);
        let next = ll_of(lambda, theta);
        let improvement = next - ll;
        ll = next;
        if improvement < opts.tolerance {
            converged = true;
            break;
        }
    }
    let params = MarginalParams {
        family: Family::Zip,
        lambda,
        phi: None,
        theta,
    };
    MarginalFit {
        params,
        log_likelihood: ll,
        iterations,
        status: status(converged),
        weakly_identified: identifiability_flag(theta, n - n0),
        n_obs: n,
        n_positive: n - n0,
    }
}

/// Maximum-likelihood fit to interval-censored category counts
/// `[never, once, 2-4, 5+]` (weights allowed).
pub fn fit_mle_censored(counts: &[f64; N_CATEGORIES], family: Family) -> Result<MarginalFit> {
    fit_censored_with(counts, family, FitOptions::default())
}

pub fn fit_censored_with(counts: &[f64; N_CATEGORIES], family: Family, opts: FitOptions) -> Result<MarginalFit> {
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::domain("category counts must be finite and non-negative"));
    }
    let n: f64 = counts.iter().sum();
    if n <= 0.0 {
        return Err(Error::domain("cannot fit an empty histogram"));
    }
    let n_pos = n - counts[0];
    if n_pos <= 0.0 {
        return Err(Error::DegenerateFit { n_obs: n });
    }
    // Representative counts per category for the moment-based start.
    let pos_mean = (counts[1] + 3.0 * counts[2] + 7.0 * counts[3]) / n_pos;
    let (l0, t0) = starting_values(counts[0] / n, pos_mean);
    let t0 = t0.clamp(1e-4, 0.999);
    let lambda_starts = [l0, 0.5 * l0, 2.0 * l0, 1.0, 5.0];

    let (best, params) = match family {
        Family::Zip => {
            let starts: Vec<[f64; 2]> = lambda_starts.iter().map(|&l| [l, t0]).collect();
            let nll = |x: &[f64]| -censored_log_likelihood(counts, &zip_from_free(x));
            let best = best_of_starts(&starts, nll, opts);
            let params = zip_from_free(&best.x);
            (best, params)
        }
        Family::Zinb => {
            let mut starts: Vec<[f64; 3]> = Vec::new();
            for &l in &lambda_starts {
                for &phi in &[0.5, 2.0, 1e3] {
                    starts.push([l, phi, t0]);
                }
            }
            let nll = |x: &[f64]| -censored_log_likelihood(counts, &zinb_from_free(x));
            let best = best_of_starts(&starts, nll, opts);
            let params = zinb_from_free(&best.x);
            (best, params)
        }
    };
    Ok(MarginalFit {
        params,
        log_likelihood: -best.value,
        iterations: best.iterations,
        status: status(best.converged),
        weakly_identified: identifiability_flag(params.theta, n_pos),
        n_obs: n,
        n_positive: n_pos,
    })
}

/// Asymptotic standard errors from the observed information, in the order
/// `(lambda, [phi,] theta)`. `None` if the information matrix is singular.
pub fn exact_standard_errors(fit: &MarginalFit, hist: &CountHistogram) -> Option<Vec<f64>> {
    let p = fit.params;
    let natural: Vec<f64> = match p.phi {
        Some(phi) => vec![p.lambda, phi, p.theta],
        None => vec![p.lambda, p.theta],
    };
    let nll = |x: &[f64]| {
        let params = match p.family {
            Family::Zip => MarginalParams {
                family: Family::Zip,
                lambda: x[0],
                phi: None,
                theta: x[1],
            },
            Family::Zinb => MarginalParams {
                family: Family::Zinb,
                lambda: x[0],
                phi: Some(x[1]),
                theta: x[2],
            },
        };
        -hist.log_likelihood(&params)
    };
    let hess = optim::numerical_hessian(&nll, &natural);
    let k = natural.len();
    let info = DMatrix::from_fn(k, k, |i, j| hess[i][j]);
    let cov = info.try_inverse()?;
    (0..k).map(|i| (cov[(i, i)] > 0.0).then(|| cov[(i, i)].sqrt())).collect()
}

fn status(converged: bool) -> FitStatus {
    if converged {
        FitStatus::Converged
    } else {
        FitStatus::IterationLimit
    }
}

const FREE_BOUND: f64 = 25.0;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn zip_from_free(x: &[f64]) -> MarginalParams {
    MarginalParams {
        family: Family::Zip,
        lambda: x[0].clamp(-FREE_BOUND, FREE_BOUND).exp(),
        phi: None,
        theta: logistic(x[1].clamp(-FREE_BOUND, FREE_BOUND)),
    }
}

fn zinb_from_free(x: &[f64]) -> MarginalParams {
    MarginalParams {
        family: Family::Zinb,
        lambda: x[0].clamp(-FREE_BOUND, FREE_BOUND).exp(),
        phi: Some(x[1].clamp(-FREE_BOUND, FREE_BOUND).exp()),
        theta: logistic(x[2].clamp(-FREE_BOUND, FREE_BOUND)),
    }
}

/// Starts are given on the natural scale `(lambda, [phi,] theta)`.
fn best_of_starts<const K: usize>(
    starts: &[[f64; K]],
    nll: impl Fn(&[f64]) -> f64,
    opts: FitOptions,
) -> optim::Minimum {
    starts
        .iter()
        .map(|s| {
            let mut free: Vec<f64> = s[..K - 1].iter().map(|v| v.ln()).collect();
            free.push(logit(s[K - 1].clamp(1e-10, 1.0 - 1e-10)));
            optim::bfgs(&nll, &free, opts.tolerance, opts.max_iterations)
        })
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start")
}
