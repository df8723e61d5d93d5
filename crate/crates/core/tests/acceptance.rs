//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use ctsim_core::coding::categorize;
use ctsim_core::count_models::*;
use ctsim_core::estimation::estimate_ols_hc2;
use ctsim_core::ingest::{fit_model, read_survey, synthetic_survey, SurveyDescriptor};
use ctsim_core::matrix::CountMatrix;
use ctsim_core::mc_harness::*;
use ctsim_core::multivariate::*;
use ctsim_core::potential_outcomes::*;
use ctsim_core::stats::chi_square_gof;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::Instant;

const SEED: u64 = 20240611;
const N_UNITS: usize = 1680;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn simulate(model: &MultiActModel, preset: &str, target: TargetSet) -> PerformanceStats {
    let sc = EffectScenario::preset(preset).unwrap().with_target(target);
    let cfg = SimulationConfig::from_model(model.clone(), sc, N_UNITS, SEED).unwrap();
    run_simulation(&cfg).unwrap().stats
}

fn example_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/example")
}

fn fitted_example_model() -> MultiActModel {
    let dir = example_dir();
    let d = SurveyDescriptor::read(dir.join("descriptor.json")).expect("bundled descriptor");
    let table = read_survey(dir.join("survey.csv"), &d).expect("bundled survey");
    fit_model(&table, Family::Zinb).expect("fit bundled survey").0
}

fn calibrated(s: &CodingStats) -> (bool, bool) {
    (s.bias.abs() < 3.0 * s.mc_se.bias, (0.93..=0.97).contains(&s.coverage))
}

fn c1_null_calibration() -> Outcome {
    let start = Instant::now();
    let s = simulate(&default_model(), "null", TargetSet::ALL);
    let secs = start.elapsed().as_secs_f64();
    let mut ok = secs < 60.0;
    let mut parts = Vec::new();
    for c in Coding::ALL {
        let st = s.coding(c);
        let (bias_ok, cov_ok) = calibrated(st);
        ok &= bias_ok && cov_ok && (0.03..=0.07).contains(&st.power);
        parts.push(format!(
            "{c}: reject {:.3}, coverage {:.3}, bias/mc_se {:+.2}",
            st.power,
            st.coverage,
            st.bias / st.mc_se.bias
        ));
    }
    check(ok, format!("{}; {secs:.1}s", parts.join("; ")))
}

fn c2_effects_unbiased() -> Outcome {
    let model = default_model();
    let mut ok = true;
    let mut parts = Vec::new();
    for sc in EffectScenario::effect_presets() {
        let s = simulate(&model, &sc.name, TargetSet::ALL);
        for c in Coding::ALL {
            let st = s.coding(c);
            let (bias_ok, cov_ok) = calibrated(st);
            ok &= bias_ok && cov_ok;
            if !(bias_ok && cov_ok) {
                parts.push(format!(
                    "{} {c}: coverage {:.3}, bias/mc_se {:+.2}",
                    sc.name,
                    st.coverage,
                    st.bias / st.mc_se.bias
                ));
            } else {
                parts.push(format!("{} {c}: cov {:.3}", sc.name, st.coverage));
            }
        }
    }
    check(ok, parts.join("; "))
}

fn c3_cessation_favors_binary(model: &MultiActModel) -> Outcome {
    let s = simulate(model, "cessation_only", TargetSet::ALL);
    check(
        s.binary.power > s.sum.power,
        format!(
            "power binary {:.3} vs sum {:.3} (diff {:+.3} ± {:.3})",
            s.binary.power, s.sum.power, s.power_diff, s.power_diff_se
        ),
    )
}

fn c4_reduction_favors_sum(model: &MultiActModel) -> Outcome {
    let s = simulate(model, "reduction_only", TargetSet::ALL);
    let ok = s.binary.tau_true_zero && (0.03..=0.07).contains(&s.binary.power) && s.sum.power - s.binary.power >= 0.05;
    check(
        ok,
        format!(
            "binary rejection {:.3} (true τ = 0: {}), sum power {:.3}, gap {:+.3}",
            s.binary.power,
            s.binary.tau_true_zero,
            s.sum.power,
            s.sum.power - s.binary.power
        ),
    )
}

fn c5_sexual_only(model: &MultiActModel) -> Outcome {
    let sexual: Vec<usize> = (0..model.k()).filter(|&i| model.acts[i].category == ActCategory::Sexual).collect();
    let physical: Vec<usize> = (0..model.k()).filter(|&i| model.acts[i].category == ActCategory::Physical).collect();
    let correlated = sexual.iter().all(|&s| physical.iter().any(|&p| model.sigma.get(s, p) > 0.1));
    let mut ok = sexual.len() == 3 && correlated;
    let mut parts = vec![format!("{} sexual acts, correlated with physical: {correlated}", sexual.len())];
    for sc in EffectScenario::effect_presets() {
        let s = simulate(model, &sc.name, TargetSet::SEXUAL);
        let in_band = (0.03..=0.20).contains(&s.binary.power) && (0.03..=0.20).contains(&s.sum.power);
        ok &= in_band;
        parts.push(format!("{}: binary {:.3}, sum {:.3}", sc.name, s.binary.power, s.sum.power));
        if sc.name == "cessation_only" {
            let not_dominated = s.sum.power >= s.binary.power - 2.0 * s.power_diff_se;
            ok &= not_dominated;
            parts.push(format!("sum not dominated: {not_dominated}"));
        }
    }
    check(ok, parts.join("; "))
}

fn sandwich_se(y: &[f64], z: &[u8]) -> f64 {
    let n = y.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { f64::from(z[i]) });
    let yv = DVector::from_column_slice(y);
    let bread = (x.transpose() * &x).try_inverse().unwrap();
    let e = &yv - &x * (&bread * x.transpose() * &yv);
    let h = &x * &bread * x.transpose();
    let mut meat = DMatrix::zeros(2, 2);
    for i in 0..n {
        let xi = x.row(i).transpose();
        meat += (e[i] * e[i] / (1.0 - h[(i, i)])) * &xi * xi.transpose();
    }
    (&bread * meat * &bread)[(1, 1)].sqrt()
}

fn c6_hc2_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut max_sandwich, mut max_neyman) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(10..400);
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        if z.iter().filter(|&&v| v == 1).count() < 2 || z.iter().filter(|&&v| v == 0).count() < 2 {
            return Err("degenerate random assignment".into());
        }
        let y: Vec<f64> = z.iter().map(|&zi| rng.random::<f64>() * 2.0 + 0.3 * f64::from(zi)).collect();
        let r = estimate_ols_hc2(&y, &z).unwrap();
        max_sandwich = max_sandwich.max((r.se - sandwich_se(&y, &z)).abs());
        let arm = |a: u8| y.iter().zip(&z).filter(|(_, &zi)| zi == a).map(|(&v, _)| v).collect::<Vec<_>>();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (t, c) = (arm(1), arm(0));
        let neyman = (var(&t) / t.len() as f64 + var(&c) / c.len() as f64).sqrt();
        max_neyman = max_neyman.max((r.se - neyman).abs() / neyman);
    }
    check(
        max_sandwich < 1e-10 && max_neyman <= 4.0 * f64::EPSILON,
        format!("max |se - sandwich| {max_sandwich:.2e}; max relative |se - neyman| {max_neyman:.2e}"),
    )
}

fn c7_mle_recovery() -> Outcome {
    let truth = MarginalParams::zip(2.36, 0.84).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let s = zi_sample(&truth, 50_000, &mut rng).unwrap();
    let exact = fit_mle_exact(&s, Family::Zip).unwrap().params;
    let mut cats = [0.0; 4];
    for &v in &s.values {
        cats[categorize(v) as usize] += 1.0;
    }
    let cens = fit_mle_censored(&cats, Family::Zip).unwrap().params;
    let close = |p: &MarginalParams| (p.lambda - 2.36).abs() <= 0.1 && (p.theta - 0.84).abs() <= 0.01;
    let mut dominated = 0;
    for _ in 0..100 {
        let gen = MarginalParams::zinb(rng.random_range(1.0..4.0), rng.random_range(0.3..3.0), rng.random_range(0.3..0.9)).unwrap();
        let d = zi_sample(&gen, 1000, &mut rng).unwrap();
        let zip = fit_mle_exact(&d, Family::Zip).unwrap();
        let zinb = fit_mle_exact(&d, Family::Zinb).unwrap();
        if zinb.log_likelihood >= zip.log_likelihood {
            dominated += 1;
        }
    }
    check(
        close(&exact) && close(&cens) && dominated == 100,
        format!(
            "exact λ {:.3} θ {:.4}; censored λ {:.3} θ {:.4}; ZINB ≥ ZIP in {dominated}/100",
            exact.lambda, exact.theta, cens.lambda, cens.theta
        ),
    )
}

fn copula_grid() -> Vec<MultiActModel> {
    let phys = |k: usize| -> Vec<ActSpec> {
        (1..=k)
            .map(|i| ActSpec::new(i, format!("act {i}"), ActCategory::Physical, Severity::Moderate))
            .collect()
    };
    let zip = |l, t| MarginalParams::zip(l, t).unwrap();
    let zinb = |l, p, t| MarginalParams::zinb(l, p, t).unwrap();
    vec![
        MultiActModel::new(phys(2), vec![zip(2.36, 0.84), zip(2.36, 0.84)], CorrelationMatrix::exchangeable(2, 0.6)).unwrap(),
        MultiActModel::new(
            phys(3),
            vec![zinb(2.0, 1.0, 0.6), zip(1.2, 0.5), zinb(3.5, 0.5, 0.8)],
            CorrelationMatrix::exchangeable(3, 0.3),
        )
        .unwrap(),
        MultiActModel::new(
            phys(4),
            vec![zip(2.36, 0.7), zinb(2.0, 2.0, 0.75), zip(4.0, 0.85), zinb(1.5, 0.8, 0.9)],
            CorrelationMatrix::from_rows(&[
                vec![1.0, 0.7, 0.5, -0.2],
                vec![0.7, 1.0, 0.4, 0.0],
                vec![0.5, 0.4, 1.0, 0.3],
                vec![-0.2, 0.0, 0.3, 1.0],
            ])
            .unwrap(),
        )
        .unwrap(),
        MultiActModel::new(
            phys(5),
            (0..5).map(|i| zinb(1.5 + 0.4 * i as f64, 1.2, 0.55 + 0.08 * i as f64)).collect(),
            CorrelationMatrix::exchangeable(5, 0.5),
        )
        .unwrap(),
        default_model(),
    ]
}

fn c8_copula_fidelity() -> Outcome {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut min_p, mut max_err) = (1.0f64, 0.0f64);
    for model in copula_grid() {
        let y: CountMatrix = sample_joint(&model, n, &mut rng).unwrap();
        for (a, m) in model.margins.iter().enumerate() {
            let mut obs = [0.0; 4];
            for v in y.column(a) {
                obs[categorize(u64::from(v)) as usize] += 1.0;
            }
            min_p = min_p.min(chi_square_gof(&obs, &m.category_probs(), 0).p_value.unwrap());
        }
        let table = synthetic_survey(&model, n, &mut rng).unwrap();
        let (fit, _) = fit_model(&table, model.margins[0].family).unwrap();
        for i in 0..model.k() {
            for j in 0..i {
                max_err = max_err.max((fit.sigma.get(i, j) - model.sigma.get(i, j)).abs());
            }
        }
    }
    check(
        min_p > 0.01 && max_err <= 0.05,
        format!("min χ² p over all acts {min_p:.4}; max refit |Δσ| {max_err:.4}"),
    )
}

fn c9_determinism() -> Outcome {
    let sc = EffectScenario::preset("cessation_reduction_increase").unwrap();
    let mut cfg = SimulationConfig::from_model(default_model(), sc, 400, SEED).unwrap();
    cfg.n_reps = 200;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let res = pool.install(|| run_simulation(&cfg).unwrap());
        serde_json::to_vec(&(&res.records, &res.stats)).unwrap()
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    check(
        a == b && a == c,
        format!("{} bytes; rerun identical {}; 1 vs 4 threads identical {}", a.len(), a == b, a == c),
    )
}

fn c10_worked_example() -> Outcome {
    let y0 = CountMatrix::from_rows(&[[0u32], [3], [5], [4], [1]]);
    let types = [
        ResponseType::NeverViolent,
        ResponseType::NoEffect,
        ResponseType::Cessation,
        ResponseType::Reduction,
        ResponseType::Increase,
    ];
    let z = vec![0u8, 1, 1, 0, 1];
    let sc = EffectScenario::new("worked_example", [0.25, 0.25, 0.25, 0.25]).unwrap();
    let y1 = apply_effects(&y0, &types, &sc, &[true]);
    let drawn = assign_response_types(&y0, &sc, &[true], &mut ChaCha8Rng::seed_from_u64(SEED));
    let table = PotentialOutcomeTable {
        y0: y0.clone(),
        y1: y1.clone(),
        s: types.to_vec(),
        z,
    };
    let revealed = table.reveal();
    let cat = |m: &CountMatrix| m.column(0).iter().map(|&v| categorize(u64::from(v))).collect::<Vec<u8>>();
    let expected_y1 = vec![0u32, 3, 0, 2, 3];
    let ok = y1.column(0) == expected_y1
        && cat(&y1) == vec![0, 2, 0, 2, 2]
        && cat(&y0) == vec![0, 2, 3, 2, 1]
        && cat(&revealed) == vec![0, 2, 0, 2, 2]
        && drawn[0] == ResponseType::NeverViolent
        && table.check_invariants(&[true]).is_ok();
    check(
        ok,
        format!("Y(1) {:?}; Y*(1) {:?}; Y*(0) {:?}; Y* {:?}", y1.column(0), cat(&y1), cat(&y0), cat(&revealed)),
    )
}

fn main() {
    let start = Instant::now();
    let fitted = fitted_example_model();
    let criteria: Vec<Criterion> = vec![
        ("1 calibration under the null", Box::new(c1_null_calibration)),
        ("2 unbiasedness and coverage under effects", Box::new(c2_effects_unbiased)),
        ("3 cessation-only favors binary", Box::new(|| c3_cessation_favors_binary(&fitted))),
        ("4 reduction-only favors sum", Box::new(|| c4_reduction_favors_sum(&fitted))),
        ("5 sexual-only targeting", Box::new(|| c5_sexual_only(&fitted))),
        ("6 HC2 oracle", Box::new(c6_hc2_oracle)),
        ("7 MLE recovery", Box::new(c7_mle_recovery)),
        ("8 copula fidelity", Box::new(c8_copula_fidelity)),
        ("9 determinism", Box::new(c9_determinism)),
        ("10 five-unit worked example", Box::new(c10_worked_example)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(msg) => println!("PASS  criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name}: {msg}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1}s)",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
