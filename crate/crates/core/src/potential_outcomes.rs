//! Potential-outcome schedules under a program effect scenario.
//!
//! Units with no targeted act in the absence of the program stay unaffected
//! (no initiation). Every other unit gets one response type for the whole
//! row, applied to each targeted act that is positive under control:
//!
//! | type       | treated count          |
//! |------------|------------------------|
//! | no effect  | `y0`                   |
//! | cessation  | `0`                    |
//! | reduction  | `max(y0 - x, 1)`       |
//! | increase   | `y0 + x`               |
//!
//! The reduction floor keeps reduction distinct from cessation; it can be
//! switched to flooring at zero. Acts that are zero under control are never
//! initiated, and untargeted acts are untouched.

use crate::coding::CodedOutcomes;
use crate::error::{Error, Result};
use crate::matrix::CountMatrix;
use crate::multivariate::{ActCategory, ActSpec, Severity};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    /// No targeted act under control; no type is drawn.
    NeverViolent,
    NoEffect,
    Cessation,
    Reduction,
    Increase,
}

impl ResponseType {
    /// Drawable types in the order of the probability vector.
    pub const DRAWN: [ResponseType; 4] = [Self::NoEffect, Self::Cessation, Self::Reduction, Self::Increase];
}

/// Which acts a program affects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSet {
    Named(NamedTarget),
    /// 1-based act indices.
    Indices { indices: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedTarget {
    All,
    Physical,
    Sexual,
    Moderate,
}

impl TargetSet {
    pub const ALL: TargetSet = TargetSet::Named(NamedTarget::All);
    pub const PHYSICAL: TargetSet = TargetSet::Named(NamedTarget::Physical);
    pub const SEXUAL: TargetSet = TargetSet::Named(NamedTarget::Sexual);
    pub const MODERATE: TargetSet = TargetSet::Named(NamedTarget::Moderate);

    pub fn presets() -> [TargetSet; 4] {
        [Self::ALL, Self::PHYSICAL, Self::SEXUAL, Self::MODERATE]
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Self::ALL),
            "physical" => Ok(Self::PHYSICAL),
            "sexual" => Ok(Self::SEXUAL),
            "moderate" => Ok(Self::MODERATE),
            other => Err(Error::domain(format!("unknown target '{other}'"))),
        }
    }

    /// Targeted flag per act.
    pub fn mask(&self, acts: &[ActSpec]) -> Result<Vec<bool>> {
        let mask: Vec<bool> = match self {
            TargetSet::Named(NamedTarget::All) => vec![true; acts.len()],
            TargetSet::Named(NamedTarget::Physical) => {
                acts.iter().map(|a| a.category == ActCategory::Physical).collect()
            }
            TargetSet::Named(NamedTarget::Sexual) => acts.iter().map(|a| a.category == ActCategory::Sexual).collect(),
            TargetSet::Named(NamedTarget::Moderate) => {
                acts.iter().map(|a| a.severity == Severity::Moderate).collect()
            }
            TargetSet::Indices { indices } => {
                let mut m = vec![false; acts.len()];
                for &i in indices {
                    if i == 0 || i > acts.len() {
                        return Err(Error::domain(format!("target index {i} outside 1..={}", acts.len())));
                    }
                    m[i - 1] = true;
                }
                m
            }
        };
        if !mask.iter().any(|&t| t) {
            return Err(Error::domain(format!("target '{self}' selects no acts")));
        }
        Ok(mask)
    }
}

impl fmt::Display for TargetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSet::Named(NamedTarget::All) => f.write_str("all"),
            TargetSet::Named(NamedTarget::Physical) => f.write_str("physical"),
            TargetSet::Named(NamedTarget::Sexual) => f.write_str("sexual"),
            TargetSet::Named(NamedTarget::Moderate) => f.write_str("moderate"),
            TargetSet::Indices { indices } => {
                let parts: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
                write!(f, "acts[{}]", parts.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionFloor {
    #[default]
    One,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectScenario {
    pub name: String,
    /// Probabilities of no effect, cessation, reduction, increase.
    pub p_s: [f64; 4],
    /// Fixed change `x` for reduction and increase.
    #[serde(default = "default_magnitude")]
    pub magnitude: u32,
    #[serde(default = "default_target")]
    pub target: TargetSet,
    #[serde(default)]
    pub reduction_floor: ReductionFloor,
}

fn default_magnitude() -> u32 {
    2
}

fn default_target() -> TargetSet {
    TargetSet::ALL
}

/// Named presets: the pure null and the four effect mixes.
pub const PRESET_NAMES: [&str; 5] = [
    "null",
    "cessation_only",
    "cessation_reduction",
    "reduction_only",
    "cessation_reduction_increase",
];

impl EffectScenario {
    pub fn new(name: impl Into<String>, p_s: [f64; 4]) -> Result<Self> {
        let s = Self {
            name: name.into(),
            p_s,
            magnitude: default_magnitude(),
            target: TargetSet::ALL,
            reduction_floor: ReductionFloor::One,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let p_s = match name {
            "null" => [1.0, 0.0, 0.0, 0.0],
            "cessation_only" => [0.70, 0.30, 0.0, 0.0],
            "cessation_reduction" => [0.70, 0.10, 0.20, 0.0],
            "reduction_only" => [0.70, 0.0, 0.30, 0.0],
            "cessation_reduction_increase" => [0.70, 0.10, 0.15, 0.05],
            other => return Err(Error::domain(format!("unknown scenario preset '{other}'"))),
        };
        Self::new(name, p_s)
    }

    /// The four effect presets, excluding the null.
    pub fn effect_presets() -> Vec<Self> {
        PRESET_NAMES[1..]
            .iter()
            .map(|n| Self::preset(n).expect("known preset"))
            .collect()
    }

    pub fn with_target(mut self, target: TargetSet) -> Self {
        self.target = target;
        self
    }

    pub fn with_magnitude(mut self, x: u32) -> Self {
        self.magnitude = x;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_s.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain(format!("response-type probabilities must be non-negative: {:?}", self.p_s)));
        }
        let total: f64 = self.p_s.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("response-type probabilities sum to {total}, not 1")));
        }
        if self.magnitude < 1 {
            return Err(Error::domain("effect magnitude must be at least 1"));
        }
        Ok(())
    }
}

/// `true` if any targeted act is positive in the row.
fn targeted_positive(row: &[u32], targeted: &[bool]) -> bool {
    row.iter().zip(targeted).any(|(&y, &t)| t && y > 0)
}

/// Draws a response type for each unit with a positive targeted act; all other
/// units are labelled [`ResponseType::NeverViolent`]. Exactly one uniform is
/// consumed per eligible unit.
pub fn assign_response_types<R: Rng + ?Sized>(
    y0: &CountMatrix,
    scenario: &EffectScenario,
    targeted: &[bool],
    rng: &mut R,
) -> Vec<ResponseType> {
    let last_positive = (0..4).rev().find(|&i| scenario.p_s[i] > 0.0).unwrap_or(0);
    y0.rows()
        .map(|row| {
            if !targeted_positive(row, targeted) {
                return ResponseType::NeverViolent;
            }
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for (i, &p) in scenario.p_s.iter().enumerate() {
                cum += p;
                if u < cum {
                    return ResponseType::DRAWN[i];
                }
            }
            ResponseType::DRAWN[last_positive]
        })
        .collect()
}

/// Treated potential outcomes implied by the control counts and response types.
pub fn apply_effects(
    y0: &CountMatrix,
    types: &[ResponseType],
    scenario: &EffectScenario,
    targeted: &[bool],
) -> CountMatrix {
    assert_eq!(types.len(), y0.n_rows(), "one response type per unit");
    let x = scenario.magnitude;
    let mut y1 = y0.clone();
    for (i, &s) in types.iter().enumerate() {
        let row = y1.row_mut(i);
        for (y, &t) in row.iter_mut().zip(targeted) {
            if !t || *y == 0 {
                continue;
            }
            *y = match s {
                ResponseType::NeverViolent | ResponseType::NoEffect => *y,
                ResponseType::Cessation => 0,
                ResponseType::Reduction => match scenario.reduction_floor {
                    ReductionFloor::One => y.saturating_sub(x).max(1),
                    ReductionFloor::Zero => y.saturating_sub(x),
                },
                ResponseType::Increase => y.saturating_add(x),
            };
        }
    }
    y1
}

/// Complete randomization: exactly `floor(n / 2)` units treated, uniformly
/// over all such assignments.
pub fn randomize<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<u8>> {
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 units to randomize, got {n}")));
    }
    let mut z = vec![0u8; n];
    for i in rand::seq::index::sample(rng, n, n / 2) {
        z[i] = 1;
    }
    Ok(z)
}

/// Full schedule for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    pub y0: CountMatrix,
    pub y1: CountMatrix,
    pub s: Vec<ResponseType>,
    pub z: Vec<u8>,
}

/// Finite-sample average effects on each coded outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimands {
    pub tau_binary: f64,
    pub tau_sum: f64,
}

impl PotentialOutcomeTable {
    /// Randomizes, then draws types and applies effects. Drawing the
    /// assignment first keeps it identical across scenarios and target sets
    /// that share a generator state.
    pub fn generate<R: Rng + ?Sized>(
        y0: CountMatrix,
        scenario: &EffectScenario,
        targeted: &[bool],
        rng: &mut R,
    ) -> Result<Self> {
        let z = randomize(y0.n_rows(), rng)?;
        let s = assign_response_types(&y0, scenario, targeted, rng);
        let y1 = apply_effects(&y0, &s, scenario, targeted);
        Ok(Self { y0, y1, s, z })
    }

    /// `Y = Z Y(1) + (1 - Z) Y(0)`
    pub fn reveal(&self) -> CountMatrix {
        let mut out = self.y0.clone();
        for (i, &zi) in self.z.iter().enumerate() {
            if zi == 1 {
                out.row_mut(i).copy_from_slice(self.y1.row(i));
            }
        }
        out
    }

    pub fn true_estimands(&self) -> TrueEstimands {
        true_estimands(&self.y0, &self.y1)
    }

    /// Checks the schedule invariants for the given target mask.
    pub fn check_invariants(&self, targeted: &[bool]) -> std::result::Result<(), String> {
        for i in 0..self.y0.n_rows() {
            let (r0, r1) = (self.y0.row(i), self.y1.row(i));
            let s = self.s[i];
            if !targeted_positive(r0, targeted) && r0 != r1 {
                return Err(format!("unit {i}: changed without targeted violence"));
            }
            for (k, ((&a, &b), &t)) in r0.iter().zip(r1).zip(targeted).enumerate() {
                let bad = if !t || a == 0 {
                    a != b
                } else {
                    match s {
                        ResponseType::NeverViolent => true,
                        ResponseType::NoEffect => a != b,
                        ResponseType::Cessation => b != 0,
                        ResponseType::Reduction => !(b < a || a == 1),
                        ResponseType::Increase => b <= a,
                    }
                };
                if bad {
                    return Err(format!("unit {i}, act {k}: type {s:?} with y0={a}, y1={b}"));
                }
            }
        }
        Ok(())
    }
}

/// Mean of coded `y1` minus coded `y0`, for both codings.
pub fn true_estimands(y0: &CountMatrix, y1: &CountMatrix) -> TrueEstimands {
    let c0 = CodedOutcomes::from_latent(y0);
    let c1 = CodedOutcomes::from_latent(y1);
    let n = y0.n_rows() as f64;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
    TrueEstimands {
        tau_binary: diff(&c1.binary, &c0.binary),
        tau_sum: diff(&c1.sum, &c0.sum),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::categorize;
    use crate::multivariate::default_acts;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(y: u32) -> CountMatrix {
        CountMatrix::from_rows(&[[y]])
    }

    fn scenario_x2() -> EffectScenario {
        EffectScenario::preset("cessation_reduction_increase").unwrap()
    }

    #[test]
    fn five_unit_worked_example() {
        let sc = scenario_x2();
        let t = [true];
        // (type, y0, y1)
        let rows = [
            (ResponseType::NeverViolent, 0, 0),
            (ResponseType::NoEffect, 3, 3),
            (ResponseType::Cessation, 5, 0),
            (ResponseType::Reduction, 4, 2),
            (ResponseType::Increase, 1, 3),
        ];
        for (s, y0, y1) in rows {
            assert_eq!(apply_effects(&single(y0), &[s], &sc, &t).get(0, 0), y1, "{s:?}");
        }
    }

    #[test]
    fn reduction_floors_at_one() {
        let sc = EffectScenario::preset("reduction_only").unwrap().with_magnitude(5);
        let y1 = apply_effects(&single(2), &[ResponseType::Reduction], &sc, &[true]);
        assert_eq!(y1.get(0, 0), 1);
        let mut zero_floor = sc.clone();
        zero_floor.reduction_floor = ReductionFloor::Zero;
        assert_eq!(apply_effects(&single(2), &[ResponseType::Reduction], &zero_floor, &[true]).get(0, 0), 0);
    }

    #[test]
    fn zero_acts_within_violent_rows_are_not_initiated() {
        let y0 = CountMatrix::from_rows(&[[3, 0, 1]]);
        let sc = scenario_x2();
        let y1 = apply_effects(&y0, &[ResponseType::Increase], &sc, &[true; 3]);
        assert_eq!(y1.row(0), &[5, 0, 3]);
    }

    #[test]
    fn never_violent_unit_gets_no_type() {
        let y0 = CountMatrix::from_rows(&[[0, 0], [0, 2]]);
        let sc = EffectScenario::preset("cessation_only").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = assign_response_types(&y0, &sc, &[true, true], &mut rng);
        assert_eq!(s[0], ResponseType::NeverViolent);
        assert_ne!(s[1], ResponseType::NeverViolent);
        // untargeted violence does not make a unit eligible
        let s = assign_response_types(&y0, &sc, &[true, false], &mut rng);
        assert_eq!(s[1], ResponseType::NeverViolent);
    }

    #[test]
    fn pure_null_labels_no_effect() {
        let y0 = CountMatrix::from_rows(&[[1], [4], [0]]);
        let sc = EffectScenario::preset("null").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = assign_response_types(&y0, &sc, &[true], &mut rng);
        assert_eq!(s, vec![ResponseType::NoEffect, ResponseType::NoEffect, ResponseType::NeverViolent]);
    }

    #[test]
    fn randomize_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(randomize(4, &mut rng).unwrap().iter().filter(|&&z| z == 1).count(), 2);
        assert_eq!(randomize(1680, &mut rng).unwrap().iter().map(|&z| z as usize).sum::<usize>(), 840);
        assert_eq!(randomize(5, &mut rng).unwrap().iter().map(|&z| z as usize).sum::<usize>(), 2);
        assert!(randomize(1, &mut rng).is_err());
    }

    #[test]
    fn scenario_validation() {
        assert!(EffectScenario::new("bad", [0.5, 0.5, 0.5, 0.0]).is_err());
        assert!(EffectScenario::new("neg", [1.1, -0.1, 0.0, 0.0]).is_err());
        assert!(EffectScenario::preset("unknown").is_err());
        let mut s = EffectScenario::preset("null").unwrap();
        s.magnitude = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn target_masks() {
        let acts = default_acts();
        let phys = TargetSet::PHYSICAL.mask(&acts).unwrap();
        assert_eq!(phys.iter().filter(|&&b| b).count(), 7);
        let sex = TargetSet::SEXUAL.mask(&acts).unwrap();
        assert_eq!(sex, [vec![false; 7], vec![true; 3]].concat());
        let moderate = TargetSet::MODERATE.mask(&acts).unwrap();
        assert_eq!(moderate.iter().filter(|&&b| b).count(), 3);
        let explicit = TargetSet::Indices { indices: vec![1, 10] }.mask(&acts).unwrap();
        assert!(explicit[0] && explicit[9]);
        assert!(TargetSet::Indices { indices: vec![11] }.mask(&acts).is_err());
    }

    #[test]
    fn target_serde_accepts_names_and_indices() {
        let named: TargetSet = serde_json::from_str("\"sexual\"").unwrap();
        assert_eq!(named, TargetSet::SEXUAL);
        let idx: TargetSet = serde_json::from_str("{\"indices\":[2,3]}").unwrap();
        assert_eq!(idx.to_string(), "acts[2;3]");
    }

    #[test]
    fn reveal_picks_arm() {
        let y0 = CountMatrix::from_rows(&[[4], [5]]);
        let y1 = CountMatrix::from_rows(&[[2], [0]]);
        let t = PotentialOutcomeTable {
            y0,
            y1,
            s: vec![ResponseType::Reduction, ResponseType::Cessation],
            z: vec![1, 0],
        };
        let y = t.reveal();
        assert_eq!(y.column(0), vec![2, 5]);
        assert_eq!(categorize(y.get(0, 0) as u64), 2);
    }
}
