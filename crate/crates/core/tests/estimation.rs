use ctsim_core::estimation::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// HC2 slope SE from the full sandwich (X'X)^-1 X' diag(e^2 / (1 - h)) X (X'X)^-1.
fn sandwich_hc2(y: &[f64], z: &[u8]) -> (f64, f64) {
    let n = y.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { f64::from(z[i]) });
    let yv = DVector::from_column_slice(y);
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let beta = &xtx_inv * x.transpose() * &yv;
    let resid = &yv - &x * &beta;
    let hat = &x * &xtx_inv * x.transpose();
    let mut meat = DMatrix::zeros(2, 2);
    for i in 0..n {
        let w = resid[i] * resid[i] / (1.0 - hat[(i, i)]);
        let xi = x.row(i).transpose();
        meat += w * &xi * xi.transpose();
    }
    let v = &xtx_inv * meat * &xtx_inv;
    (beta[1], v[(1, 1)].sqrt())
}

fn neyman_se(y: &[f64], z: &[u8]) -> f64 {
    let arm = |a: u8| -> Vec<f64> { y.iter().zip(z).filter(|(_, &zi)| zi == a).map(|(&v, _)| v).collect() };
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (t, c) = (arm(1), arm(0));
    (var(&t) / t.len() as f64 + var(&c) / c.len() as f64).sqrt()
}

fn dataset(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(8..300);
    let n1 = rng.random_range(3..n - 3);
    let mut z: Vec<u8> = (0..n).map(|i| u8::from(i < n1)).collect();
    // shuffle so arms interleave
    for i in (1..n).rev() {
        z.swap(i, rng.random_range(0..=i));
    }
    let continuous = rng.random_bool(0.5);
    let y = z
        .iter()
        .map(|&zi| {
            if continuous {
                rng.random::<f64>() * 3.0 + 0.4 * f64::from(zi)
            } else {
                f64::from(u8::from(rng.random_bool(0.3 + 0.2 * f64::from(zi))))
            }
        })
        .collect();
    (y, z)
}

#[test]
fn se_matches_brute_force_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 100 {
        let (y, z) = dataset(&mut rng);
        let r = estimate_ols_hc2(&y, &z).unwrap();
        if r.degenerate {
            continue;
        }
        let (slope, se) = sandwich_hc2(&y, &z);
        assert!((r.tau_hat - slope).abs() < 1e-10);
        assert!((r.se - se).abs() < 1e-10, "{} vs {}", r.se, se);
        checked += 1;
    }
}

#[test]
fn se_equals_the_arm_variance_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (y, z) = dataset(&mut rng);
        let r = estimate_ols_hc2(&y, &z).unwrap();
        let expected = neyman_se(&y, &z);
        assert!((r.se - expected).abs() <= 4.0 * f64::EPSILON * expected.max(1e-300));
    }
}

#[test]
fn fifty_unit_example_matches_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z: Vec<u8> = (0..50).map(|i| u8::from(i % 2 == 0)).collect();
    let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let r = estimate_ols_hc2(&y, &z).unwrap();
    assert!((r.se - sandwich_hc2(&y, &z).1).abs() < 1e-10);
}

#[test]
fn p_value_just_above_alpha_is_not_significant() {
    let r = EstimateResult {
        tau_hat: 0.1,
        se: 0.05,
        ci_low: 0.0,
        ci_high: 0.2,
        p_value: 0.051,
        n_treated: 10,
        n_control: 10,
        degenerate: false,
    };
    assert!(!reject_null(&r, 0.05));
}

#[test]
fn normal_p_value_and_interval_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (y, z) = dataset(&mut rng);
        let r = estimate_ols_hc2(&y, &z).unwrap();
        if r.degenerate {
            continue;
        }
        // zero lies outside the 95% interval exactly when p < 0.05
        let excludes_zero = r.ci_low > 0.0 || r.ci_high < 0.0;
        if (r.p_value - 0.05).abs() > 1e-9 {
            assert_eq!(excludes_zero, reject_null(&r, 0.05));
        }
    }
}
