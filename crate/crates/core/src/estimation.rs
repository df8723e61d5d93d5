//! Difference in means via least squares on `y = a + tau z + e` with HC2
//! robust standard errors.
//!
//! For a single binary regressor the HC2 sandwich for the slope reduces to the
//! Neyman variance `s1^2 / n1 + s0^2 / n0` (arm variances with `n - 1`
//! denominators), which is what is computed here.

use crate::error::{Error, Result};
use crate::stats::{normal_quantile, normal_sf};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% normal critical value.
pub const Z_975: f64 = 1.959963984540054;

/// Reference distribution for p-values and intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    #[default]
    Normal,
    /// Student t with Welch-Satterthwaite degrees of freedom.
    WelchT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n_treated: usize,
    pub n_control: usize,
    /// Both arms have zero variance, so `se == 0`.
    pub degenerate: bool,
}

impl EstimateResult {
    pub fn covers(&self, tau: f64) -> bool {
        self.ci_low <= tau && tau <= self.ci_high
    }
}

struct ArmSummary {
    n: usize,
    mean: f64,
    var: f64,
}

fn summarize_arm(y: &[f64], z: &[u8], arm: u8) -> ArmSummary {
    let vals = y.iter().zip(z).filter(|(_, &zi)| zi == arm).map(|(&v, _)| v);
    let (n, sum) = vals.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let ss: f64 = vals.map(|v| (v - mean) * (v - mean)).sum();
    ArmSummary {
        n,
        mean,
        var: ss / (n as f64 - 1.0),
    }
}

/// Least-squares treatment effect with HC2 standard error and normal-reference
/// inference at the 95% level.
pub fn estimate_ols_hc2(y: &[f64], z: &[u8]) -> Result<EstimateResult> {
    estimate_with(y, z, Reference::Normal)
}

pub fn estimate_with(y: &[f64], z: &[u8], reference: Reference) -> Result<EstimateResult> {
    if y.len() != z.len() {
        return Err(Error::domain(format!("{} outcomes but {} assignments", y.len(), z.len())));
    }
    if z.iter().any(|&v| v > 1) {
        return Err(Error::domain("assignment vector must be binary"));
    }
    let t = summarize_arm(y, z, 1);
    let c = summarize_arm(y, z, 0);
    if t.n < 2 || c.n < 2 {
        return Err(Error::Inference(format!(
            "each arm needs at least 2 units (treated {}, control {})",
            t.n, c.n
        )));
    }
    let tau_hat = t.mean - c.mean;
    let vt = t.var / t.n as f64;
    let vc = c.var / c.n as f64;
    let se = (vt + vc).sqrt();

    if se == 0.0 {
        let p_value = if tau_hat == 0.0 { 1.0 } else { 0.0 };
        return Ok(EstimateResult {
            tau_hat,
            se,
            ci_low: tau_hat,
            ci_high: tau_hat,
            p_value,
            n_treated: t.n,
            n_control: c.n,
            degenerate: true,
        });
    }

    let stat = tau_hat / se;
    let (crit, p_value) = match reference {
        Reference::Normal => (Z_975, (2.0 * normal_sf(stat.abs())).min(1.0)),
        Reference::WelchT => {
            let df = (vt + vc).powi(2)
                / (vt * vt / (t.n as f64 - 1.0) + vc * vc / (c.n as f64 - 1.0));
            let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Inference(e.to_string()))?;
            (dist.inverse_cdf(0.975), (2.0 * dist.sf(stat.abs())).min(1.0))
        }
    };
    Ok(EstimateResult {
        tau_hat,
        se,
        ci_low: tau_hat - crit * se,
        ci_high: tau_hat + crit * se,
        p_value,
        n_treated: t.n,
        n_control: c.n,
        degenerate: false,
    })
}

/// Strict `p < alpha`.
pub fn reject_null(result: &EstimateResult, alpha: f64) -> bool {
    result.p_value < alpha
}

/// Normal critical value for a two-sided test at level `alpha`.
pub fn critical_value(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn with_p(p: f64) -> EstimateResult {
        EstimateResult {
            tau_hat: 0.0,
            se: 1.0,
            ci_low: -1.0,
            ci_high: 1.0,
            p_value: p,
            n_treated: 2,
            n_control: 2,
            degenerate: false,
        }
    }

    #[test]
    fn arm_means() {
        let r = estimate_ols_hc2(&[1.0, 0.0, 0.0, 0.0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.tau_hat, 0.5);
        // s1^2 = 0.5, s0^2 = 0
        assert_abs_diff_eq!(r.se, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn swapping_labels_negates_estimate() {
        let y = [0.3, 0.1, 0.9, 0.4, 0.0, 0.7];
        let z = [1, 0, 1, 0, 1, 0];
        let flipped: Vec<u8> = z.iter().map(|v| 1 - v).collect();
        let a = estimate_ols_hc2(&y, &z).unwrap();
        let b = estimate_ols_hc2(&y, &flipped).unwrap();
        assert_abs_diff_eq!(a.tau_hat, -b.tau_hat, epsilon = 1e-15);
        assert_abs_diff_eq!(a.se, b.se, epsilon = 1e-15);
    }

    #[test]
    fn interval_is_symmetric_with_normal_width() {
        let y = [0.3, 0.1, 0.9, 0.4, 0.0, 0.7, 0.2, 0.2];
        let z = [1, 0, 1, 0, 1, 0, 1, 0];
        let r = estimate_ols_hc2(&y, &z).unwrap();
        assert!(r.ci_low <= r.tau_hat && r.tau_hat <= r.ci_high);
        assert_abs_diff_eq!(r.ci_high - r.ci_low, 2.0 * 1.959964 * r.se, epsilon = 1e-6 * r.se);
        assert_abs_diff_eq!(Z_975, critical_value(0.05), epsilon = 1e-12);
    }

    #[test]
    fn small_arm_is_an_error() {
        assert!(matches!(estimate_ols_hc2(&[1.0, 0.0, 0.0], &[1, 0, 0]), Err(Error::Inference(_))));
        assert!(estimate_ols_hc2(&[1.0, 0.0], &[1, 2]).is_err());
        assert!(estimate_ols_hc2(&[1.0], &[1, 0]).is_err());
    }

    #[test]
    fn zero_variance_in_both_arms() {
        let r = estimate_ols_hc2(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.se, 0.0);
        assert_eq!(r.p_value, 0.0);
        let r = estimate_ols_hc2(&[0.0; 4], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!reject_null(&r, 0.05));
    }

    #[test]
    fn rejection_is_strict() {
        assert!(reject_null(&with_p(0.049), 0.05));
        assert!(!reject_null(&with_p(0.051), 0.05));
        assert!(!reject_null(&with_p(0.05), 0.05));
    }

    #[test]
    fn welch_t_is_wider_than_normal() {
        let y = [0.8, 0.1, 0.9, 0.4, 0.5, 0.2];
        let z = [1, 0, 1, 0, 1, 0];
        let n = estimate_with(&y, &z, Reference::Normal).unwrap();
        let t = estimate_with(&y, &z, Reference::WelchT).unwrap();
        assert!(t.ci_high - t.ci_low > n.ci_high - n.ci_low);
        assert!(t.p_value > n.p_value);
    }
}
