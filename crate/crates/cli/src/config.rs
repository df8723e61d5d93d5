//! The `simulate` run configuration (TOML).

use anyhow::{anyhow, bail, Context, Result};
use ctsim_core::count_models::Family;
use ctsim_core::ingest::{fit_model, read_model, read_survey, EmpiricalResampler, SurveyDescriptor};
use ctsim_core::mc_harness::{OutcomeSource, SimulationConfig};
use ctsim_core::multivariate::{default_model, MultiActModel};
use ctsim_core::potential_outcomes::{EffectScenario, TargetSet, PRESET_NAMES};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSource {
    /// The built-in ten-act model.
    Builtin,
    /// A model file written by `ctsim fit`.
    File { path: PathBuf },
    /// Fit a survey on the fly; optionally resample its rows instead of
    /// simulating from the fitted margins.
    Survey {
        data: PathBuf,
        descriptor: PathBuf,
        #[serde(default = "default_family")]
        family: Family,
        #[serde(default)]
        resample: bool,
    },
    Inline(MultiActModel),
}

fn default_family() -> Family {
    Family::Zinb
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    fn values(&self) -> Vec<usize> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn default_presets() -> Vec<String> {
    PRESET_NAMES[1..].iter().map(|s| s.to_string()).collect()
}

fn default_targets() -> Vec<TargetSet> {
    vec![TargetSet::ALL]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub n_units: OneOrMany,
    #[serde(default = "n_reps_default")]
    pub n_reps: usize,
    #[serde(default = "n_bootstrap_default")]
    pub n_bootstrap: usize,
    #[serde(default = "alpha_default")]
    pub alpha: f64,
    #[serde(default)]
    pub latent_diagnostic: bool,
    pub model: ModelSource,
    /// Preset scenario names.
    #[serde(default = "default_presets")]
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub custom_scenarios: Vec<EffectScenario>,
    #[serde(default = "default_targets")]
    pub targets: Vec<TargetSet>,
    #[serde(default)]
    pub output: OutputSection,
}

fn n_reps_default() -> usize {
    1000
}
fn n_bootstrap_default() -> usize {
    100
}
fn alpha_default() -> f64 {
    0.05
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            bail!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version);
        }
        Ok(cfg)
    }
}

/// One simulation cell, ready to run.
pub struct Cell {
    pub n_units: usize,
    pub config: SimulationConfig,
}

pub struct ResolvedRun {
    pub cells: Vec<Cell>,
    pub seed: u64,
    pub model_description: String,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_source(model: &ModelSource, base: &Path) -> Result<(OutcomeSource, String)> {
    Ok(match model {
        ModelSource::Builtin => (OutcomeSource::parametric(default_model())?, "builtin".into()),
        ModelSource::File { path } => {
            let p = resolve_path(base, path);
            let m = read_model(&p).with_context(|| format!("reading model file {}", p.display()))?;
            (OutcomeSource::parametric(m)?, format!("file:{}", path.display()))
        }
        ModelSource::Survey {
            data,
            descriptor,
            family,
            resample,
        } => {
            let dp = resolve_path(base, descriptor);
            let d = SurveyDescriptor::read(&dp).with_context(|| format!("reading descriptor {}", dp.display()))?;
            let sp = resolve_path(base, data);
            let table = read_survey(&sp, &d).with_context(|| format!("reading survey {}", sp.display()))?;
            let (m, _) = fit_model(&table, *family)?;
            let desc = format!("survey:{}:{}{}", data.display(), family, if *resample { ":resample" } else { "" });
            if *resample {
                (OutcomeSource::Empirical(EmpiricalResampler::new(&table, &m)?), desc)
            } else {
                (OutcomeSource::parametric(m)?, desc)
            }
        }
        ModelSource::Inline(m) => {
            m.validate()?;
            (OutcomeSource::parametric(m.clone())?, "inline".into())
        }
    })
}

/// Loads the model and validates every cell before anything runs.
pub fn resolve(cfg: &RunConfig, base: &Path, seed_override: Option<u64>) -> Result<ResolvedRun> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let (source, model_description) = load_source(&cfg.model, base)?;
    let source = Arc::new(source);

    let mut presets = Vec::new();
    for name in &cfg.scenarios {
        presets.push(EffectScenario::preset(name).map_err(|e| anyhow!("{e} (known presets: {})", PRESET_NAMES.join(", ")))?);
    }
    for s in &cfg.custom_scenarios {
        s.validate().with_context(|| format!("custom scenario '{}'", s.name))?;
    }
    if presets.is_empty() && cfg.custom_scenarios.is_empty() {
        bail!("no scenarios configured");
    }
    if cfg.targets.is_empty() {
        bail!("no targets configured");
    }
    let sizes = cfg.n_units.values();
    if sizes.is_empty() {
        bail!("n_units is empty");
    }

    let mut cells = Vec::new();
    for &n_units in &sizes {
        // Presets are crossed with the target list; custom scenarios keep their own target.
        let crossed = cfg
            .targets
            .iter()
            .flat_map(|t| presets.iter().map(move |p| p.clone().with_target(t.clone())));
        for scenario in crossed.chain(cfg.custom_scenarios.iter().cloned()) {
            let config = SimulationConfig {
                source: Arc::clone(&source),
                scenario,
                n_units,
                n_reps: cfg.n_reps,
                n_bootstrap: cfg.n_bootstrap,
                alpha: cfg.alpha,
                seed,
                latent_diagnostic: cfg.latent_diagnostic,
            };
            config
                .validate()
                .with_context(|| format!("scenario '{}' with target '{}'", config.scenario.name, config.scenario.target))?;
            cells.push(Cell { n_units, config });
        }
    }
    Ok(ResolvedRun {
        cells,
        seed,
        model_description,
    })
}
