//! Jointly distributed multi-act counts.
//!
//! Each act keeps its own zero-inflated marginal; dependence comes from a
//! Gaussian copula. A latent normal vector with correlation `sigma` is mapped
//! to uniform scores and then through each act's marginal quantile function,
//! so a low latent score lands on a zero (structural or sampling) and acts with
//! correlated latents tend to occur together. `sigma` is therefore a
//! latent-scale correlation, not the covariance of the counts.

use crate::count_models::{CdfTable, MarginalParams};
use crate::error::{Error, Result};
use crate::matrix::CountMatrix;
use crate::stats::normal_cdf;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActCategory {
    Emotional,
    Physical,
    Sexual,
}

impl FromStr for ActCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "emotional" => Ok(Self::Emotional),
            "physical" => Ok(Self::Physical),
            "sexual" => Ok(Self::Sexual),
            other => Err(Error::domain(format!("unknown act category '{other}'"))),
        }
    }
}

impl fmt::Display for ActCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Emotional => "emotional",
            Self::Physical => "physical",
            Self::Sexual => "sexual",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Moderate,
    Severe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActSpec {
    /// 1-based position in the act table.
    pub index: usize,
    pub label: String,
    pub category: ActCategory,
    pub severity: Severity,
}

impl ActSpec {
    pub fn new(index: usize, label: impl Into<String>, category: ActCategory, severity: Severity) -> Self {
        Self {
            index,
            label: label.into(),
            category,
            severity,
        }
    }
}

/// Checks that act indices are exactly `1..=K` in order.
pub fn validate_acts(acts: &[ActSpec]) -> Result<()> {
    for (pos, act) in acts.iter().enumerate() {
        if act.index != pos + 1 {
            return Err(Error::domain(format!(
                "act indices must be contiguous from 1; position {} has index {}",
                pos + 1,
                act.index
            )));
        }
    }
    Ok(())
}

/// Symmetric matrix used as the copula's latent correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidMatrix(format!("expected a square {k}x{k} matrix")));
        }
        Ok(Self(DMatrix::from_fn(k, k, |i, j| rows[i][j])))
    }

    /// Every off-diagonal entry equal to `rho`.
    pub fn exchangeable(k: usize, rho: f64) -> Self {
        Self(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.0.row(i).iter().copied().collect()).collect()
    }

    /// Symmetric, unit diagonal, finite, and eigenvalues `>= -1e-10`.
    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        for i in 0..k {
            if (self.0[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal entry {i} is {} (must be 1)",
                    self.0[(i, i)]
                )));
            }
            for j in 0..k {
                let v = self.0[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidMatrix(format!("entry ({i}, {j}) is not finite")));
                }
                if (v - self.0[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidMatrix(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(self.0.clone());
        if let Some((index, &eigenvalue)) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            if eigenvalue < -EIGEN_TOL {
                return Err(Error::NotPsd { index, eigenvalue });
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrelationMatrix) -> Self {
        m.to_rows()
    }
}

/// Eigenvalues are clipped to this floor so projected matrices stay strictly
/// inside the correlation bounds.
const EIGEN_FLOOR: f64 = 1e-10;

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues, then rescales to unit diagonal.
pub fn nearest_psd(matrix: &DMatrix<f64>) -> CorrelationMatrix {
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let psd = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let k = psd.nrows();
    let scale: Vec<f64> = (0..k).map(|i| 1.0 / psd[(i, i)].sqrt()).collect();
    let mut out = DMatrix::from_fn(k, k, |i, j| psd[(i, j)] * scale[i] * scale[j]);
    for i in 0..k {
        // exact unit diagonal and symmetry after rounding
        out[(i, i)] = 1.0;
        for j in 0..i {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    CorrelationMatrix(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiActModel {
    pub acts: Vec<ActSpec>,
    pub margins: Vec<MarginalParams>,
    pub sigma: CorrelationMatrix,
}

impl MultiActModel {
    pub fn new(acts: Vec<ActSpec>, margins: Vec<MarginalParams>, sigma: CorrelationMatrix) -> Result<Self> {
        let model = Self { acts, margins, sigma };
        model.validate()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.acts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.acts.is_empty() {
            return Err(Error::domain("model needs at least one act"));
        }
        validate_acts(&self.acts)?;
        if self.margins.len() != self.acts.len() {
            return Err(Error::domain(format!(
                "{} margins for {} acts",
                self.margins.len(),
                self.acts.len()
            )));
        }
        if self.sigma.dim() != self.acts.len() {
            return Err(Error::InvalidMatrix(format!(
                "sigma is {0}x{0} but there are {1} acts",
                self.sigma.dim(),
                self.acts.len()
            )));
        }
        for m in &self.margins {
            m.validate()?;
        }
        self.sigma.validate()
    }
}

/// Prepared copula sampler: latent factor plus per-act CDF tables.
#[derive(Debug, Clone)]
pub struct JointSampler {
    model: MultiActModel,
    factor: DMatrix<f64>,
    tables: Vec<CdfTable>,
}

impl JointSampler {
    pub fn new(model: MultiActModel) -> Result<Self> {
        model.validate()?;
        // sigma = V diag(l) V', so V diag(sqrt l) is a square-root factor that
        // also works when sigma is singular.
        let eig = SymmetricEigen::new(model.sigma.as_matrix().clone());
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        let tables = model.margins.iter().map(MarginalParams::cdf_table).collect();
        Ok(Self { model, factor, tables })
    }

    pub fn model(&self) -> &MultiActModel {
        &self.model
    }

    pub fn k(&self) -> usize {
        self.model.k()
    }

    /// Draws `n` rows of latent counts.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CountMatrix {
        let k = self.k();
        let mut out = CountMatrix::zeros(n, k);
        let mut eps = vec![0.0; k];
        for i in 0..n {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(rng);
            }
            let row = out.row_mut(i);
            for (a, cell) in row.iter_mut().enumerate() {
                let z: f64 = (0..k).map(|j| self.factor[(a, j)] * eps[j]).sum();
                let y = self.tables[a].quantile(normal_cdf(z));
                *cell = u32::try_from(y).unwrap_or(u32::MAX);
            }
        }
        out
    }
}

/// `n` draws from the joint model.
pub fn sample_joint<R: Rng + ?Sized>(model: &MultiActModel, n: usize, rng: &mut R) -> Result<CountMatrix> {
    Ok(JointSampler::new(model.clone())?.sample(n, rng))
}

/// Ten-item act table: seven physical and three sexual items.
pub fn default_acts() -> Vec<ActSpec> {
    use ActCategory::{Physical, Sexual};
    use Severity::{Moderate, Severe};
    let items = [
        ("pushed you, shook you, or threw something at you", Physical, Moderate),
        ("slapped you", Physical, Moderate),
        ("twisted your arm or pulled your hair", Physical, Moderate),
        ("punched you with a fist or something that could hurt you", Physical, Severe),
        ("kicked you, dragged you, or beat you up", Physical, Severe),
        ("tried to choke or burn you on purpose", Physical, Severe),
        ("threatened or attacked you with a knife, gun, or other weapon", Physical, Severe),
        ("physically forced you to have sex when you did not want to", Sexual, Severe),
        ("physically forced you to perform other sexual acts you did not want to", Sexual, Severe),
        ("forced you with threats or in any other way to perform sexual acts", Sexual, Severe),
    ];
    items
        .into_iter()
        .enumerate()
        .map(|(i, (label, cat, sev))| ActSpec::new(i + 1, label, cat, sev))
        .collect()
}

/// Latent correlation with the usual structure: physical items correlate most
/// with each other, sexual items with each other, and sexual items more with
/// moderate than with severe physical items.
pub fn default_sigma(acts: &[ActSpec]) -> CorrelationMatrix {
    let k = acts.len();
    let pair = |a: &ActSpec, b: &ActSpec| -> f64 {
        use ActCategory::{Physical, Sexual};
        use Severity::{Moderate, Severe};
        match ((a.category, a.severity), (b.category, b.severity)) {
            ((Physical, Moderate), (Physical, Moderate)) => 0.70,
            ((Physical, Severe), (Physical, Severe)) => 0.65,
            ((Physical, _), (Physical, _)) => 0.60,
            ((Sexual, _), (Sexual, _)) => 0.70,
            ((Sexual, _), (Physical, Moderate)) | ((Physical, Moderate), (Sexual, _)) => 0.50,
            ((Sexual, _), (Physical, Severe)) | ((Physical, Severe), (Sexual, _)) => 0.40,
            _ => 0.30,
        }
    };
    CorrelationMatrix(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { pair(&acts[i], &acts[j]) }))
}

/// Default margins for [`default_acts`]: zero-inflated negative binomials
/// giving roughly 40% any-act prevalence under [`default_sigma`].
pub fn default_margins() -> Vec<MarginalParams> {
    // (lambda, phi, theta)
    let raw = [
        (2.6, 1.5, 0.70),
        (2.36, 1.2, 0.68),
        (2.0, 1.5, 0.82),
        (2.2, 1.2, 0.86),
        (2.0, 1.0, 0.885),
        (1.6, 1.5, 0.94),
        (1.4, 2.0, 0.955),
        (2.4, 1.0, 0.91),
        (2.0, 1.0, 0.95),
        (2.0, 1.2, 0.945),
    ];
    raw.iter()
        .map(|&(l, p, t)| MarginalParams::zinb(l, p, t).expect("valid default margins"))
        .collect()
}

pub fn default_model() -> MultiActModel {
    let acts = default_acts();
    let sigma = default_sigma(&acts);
    MultiActModel::new(acts, default_margins(), sigma).expect("valid default model")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_is_fixed_point() {
        let out = nearest_psd(&DMatrix::identity(4, 4));
        assert!((out.as_matrix() - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-14);
    }

    #[test]
    fn out_of_range_correlation_is_pulled_inside() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        let out = nearest_psd(&m);
        assert!(out.get(0, 1) < 1.0 && out.get(0, 1) > 0.99);
        assert!(out.min_eigenvalue() >= -1e-12);
        assert_eq!(out.get(0, 0), 1.0);
    }

    #[test]
    fn non_psd_sigma_error_names_eigenvalue() {
        let sigma = CorrelationMatrix::from_rows(&[
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ])
        .unwrap();
        match sigma.validate() {
            Err(Error::NotPsd { eigenvalue, .. }) => assert!(eigenvalue < 0.0),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn model_validation_catches_mismatches() {
        let acts = default_acts();
        let margins = default_margins()[..9].to_vec();
        assert!(MultiActModel::new(acts.clone(), margins, default_sigma(&acts)).is_err());
        let mut bad = acts.clone();
        bad[3].index = 9;
        assert!(validate_acts(&bad).is_err());
    }

    #[test]
    fn default_model_is_valid_and_has_seven_physical_three_sexual() {
        let m = default_model();
        assert_eq!(m.k(), 10);
        let physical = m.acts.iter().filter(|a| a.category == ActCategory::Physical).count();
        assert_eq!(physical, 7);
        assert!(m.sigma.min_eigenvalue() > 0.0);
    }

    #[test]
    fn sigma_serializes_as_nested_rows() {
        let s = CorrelationMatrix::exchangeable(2, 0.25);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[[1.0,0.25],[0.25,1.0]]");
        let back: CorrelationMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<CorrelationMatrix>("[[1.0,0.2]]").is_err());
    }

    #[test]
    fn cdf_tables_match_margins() {
        let model = default_model();
        let sampler = JointSampler::new(model.clone()).unwrap();
        for (a, m) in model.margins.iter().enumerate() {
            assert_abs_diff_eq!(sampler.tables[a].cdf(0), m.pmf(0), epsilon = 1e-15);
        }
    }
}
