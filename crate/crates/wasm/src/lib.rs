//! Browser bindings for the ctsim demo page.
//!
//! Each export takes plain numbers and returns a JSON string. The `*_json`
//! functions hold the logic so they can be tested natively; the wasm exports
//! only convert error strings into JavaScript exceptions.

use ctsim_core::coding::{categorize, N_CATEGORIES};
use ctsim_core::count_models::MarginalParams;
use ctsim_core::ingest::polychoric;
use ctsim_core::mc_harness::{run_simulation, SimulationConfig};
use ctsim_core::multivariate::{
    default_model, sample_joint, ActCategory, ActSpec, CorrelationMatrix, MultiActModel, Severity,
};
use ctsim_core::potential_outcomes::{EffectScenario, TargetSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Larger requests would freeze the page, which runs on the main thread.
pub const MAX_DRAWS: usize = 200_000;
pub const MAX_REP_UNITS: usize = 2_000_000;

type Json = Result<String, String>;

fn margin(lambda: f64, phi: f64, theta: f64) -> Result<MarginalParams, String> {
    let m = if phi > 0.0 {
        MarginalParams::zinb(lambda, phi, theta)
    } else {
        MarginalParams::zip(lambda, theta)
    };
    m.map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Json {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PmfOut {
    pmf: Vec<f64>,
    categories: [f64; N_CATEGORIES],
    mean: f64,
    variance: f64,
}

/// Zero-inflated count probabilities for `0..=max_y` and the four reporting
/// categories. `phi <= 0` selects the Poisson family.
pub fn marginal_pmf_json(lambda: f64, phi: f64, theta: f64, max_y: u32) -> Json {
    let m = margin(lambda, phi, theta)?;
    to_json(&PmfOut {
        pmf: (0..=u64::from(max_y.min(200))).map(|y| m.pmf(y)).collect(),
        categories: m.category_probs(),
        mean: m.mean(),
        variance: m.variance(),
    })
}

#[derive(Serialize)]
struct CopulaOut {
    cross_tab: [[f64; N_CATEGORIES]; N_CATEGORIES],
    any_act_prevalence: f64,
    polychoric: f64,
    count_correlation: f64,
}

fn pearson(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().map(|&v| f64::from(v)).sum::<f64>() / n,
        b.iter().map(|&v| f64::from(v)).sum::<f64>() / n,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Draws `n` pairs of acts sharing one margin from a Gaussian copula with
/// latent correlation `rho`, and summarises the categorised cross-tab.
pub fn copula_pair_json(rho: f64, lambda: f64, phi: f64, theta: f64, n: usize, seed: u64) -> Json {
    if n == 0 || n > MAX_DRAWS {
        return Err(format!("n must be between 1 and {MAX_DRAWS}"));
    }
    let m = margin(lambda, phi, theta)?;
    let sigma = CorrelationMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]).map_err(|e| e.to_string())?;
    let acts = (1..=2)
        .map(|i| ActSpec::new(i, format!("act {i}"), ActCategory::Physical, Severity::Moderate))
        .collect();
    let model = MultiActModel::new(acts, vec![m; 2], sigma).map_err(|e| e.to_string())?;
    let y = sample_joint(&model, n, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let (a, b) = (y.column(0), y.column(1));
    let mut tab = [[0.0; N_CATEGORIES]; N_CATEGORIES];
    let mut any = 0usize;
    for (&x, &v) in a.iter().zip(&b) {
        tab[categorize(u64::from(x)) as usize][categorize(u64::from(v)) as usize] += 1.0;
        any += usize::from(x > 0 || v > 0);
    }
    to_json(&CopulaOut {
        cross_tab: tab,
        any_act_prevalence: any as f64 / n as f64,
        polychoric: polychoric(&tab),
        count_correlation: pearson(&a, &b),
    })
}

#[derive(Serialize)]
struct PowerOut {
    scenario: String,
    target: String,
    n_units: usize,
    n_reps: usize,
    power_binary: f64,
    power_sum: f64,
    power_diff: f64,
    power_diff_se: f64,
    true_tau_binary: f64,
    true_tau_sum: f64,
    binary_tau_zero: bool,
}

/// Power of the binary and summed codings for one effect preset, using the
/// built-in ten-act model.
pub fn power_by_coding_json(preset: &str, target: &str, n_units: usize, n_reps: usize, seed: u64) -> Json {
    if n_units.saturating_mul(n_reps) > MAX_REP_UNITS {
        return Err(format!("n_units × n_reps must not exceed {MAX_REP_UNITS}"));
    }
    let target: TargetSet = serde_json::from_value(serde_json::Value::String(target.into())).map_err(|e| e.to_string())?;
    let scenario = EffectScenario::preset(preset).map_err(|e| e.to_string())?.with_target(target);
    let mut cfg = SimulationConfig::from_model(default_model(), scenario, n_units, seed).map_err(|e| e.to_string())?;
    cfg.n_reps = n_reps;
    cfg.n_bootstrap = 50;
    cfg.validate().map_err(|e| e.to_string())?;
    let s = run_simulation(&cfg).map_err(|e| e.to_string())?.stats;
    to_json(&PowerOut {
        scenario: cfg.scenario.name.clone(),
        target: cfg.scenario.target.to_string(),
        n_units,
        n_reps,
        power_binary: s.binary.power,
        power_sum: s.sum.power,
        power_diff: s.power_diff,
        power_diff_se: s.power_diff_se,
        true_tau_binary: s.binary.mean_true_tau,
        true_tau_sum: s.sum.mean_true_tau,
        binary_tau_zero: s.binary.tau_true_zero,
    })
}

fn js(r: Json) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn marginal_pmf(lambda: f64, phi: f64, theta: f64, max_y: u32) -> Result<String, JsError> {
    js(marginal_pmf_json(lambda, phi, theta, max_y))
}

#[wasm_bindgen]
pub fn copula_pair(rho: f64, lambda: f64, phi: f64, theta: f64, n: u32, seed: u32) -> Result<String, JsError> {
    js(copula_pair_json(rho, lambda, phi, theta, n as usize, u64::from(seed)))
}

#[wasm_bindgen]
pub fn power_by_coding(preset: &str, target: &str, n_units: u32, n_reps: u32, seed: u32) -> Result<String, JsError> {
    js(power_by_coding_json(preset, target, n_units as usize, n_reps as usize, u64::from(seed)))
}
