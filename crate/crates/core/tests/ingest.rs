use ctsim_core::coding::categorize;
use ctsim_core::count_models::{Family, MarginalParams};
use ctsim_core::ingest::*;
use ctsim_core::multivariate::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn four_act_model() -> MultiActModel {
    let acts = vec![
        ActSpec::new(1, "slap", ActCategory::Physical, Severity::Moderate),
        ActSpec::new(2, "push", ActCategory::Physical, Severity::Moderate),
        ActSpec::new(3, "choke", ActCategory::Physical, Severity::Severe),
        ActSpec::new(4, "forced sex", ActCategory::Sexual, Severity::Severe),
    ];
    let margins = vec![
        MarginalParams::zip(2.36, 0.70).unwrap(),
        MarginalParams::zip(1.8, 0.75).unwrap(),
        MarginalParams::zip(2.6, 0.85).unwrap(),
        MarginalParams::zip(2.0, 0.88).unwrap(),
    ];
    let sigma = CorrelationMatrix::from_rows(&[
        vec![1.0, 0.7, 0.6, 0.4],
        vec![0.7, 1.0, 0.55, 0.35],
        vec![0.6, 0.55, 1.0, 0.45],
        vec![0.4, 0.35, 0.45, 1.0],
    ])
    .unwrap();
    MultiActModel::new(acts, margins, sigma).unwrap()
}

#[test]
fn simulate_then_refit_recovers_the_model() {
    let truth = four_act_model();
    let table = synthetic_survey(&truth, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (fit, report) = fit_model(&table, Family::Zip).unwrap();
    for (a, (f, t)) in fit.margins.iter().zip(&truth.margins).enumerate() {
        assert!((f.lambda - t.lambda).abs() < 0.1, "act {a}: {f:?}");
        assert!((f.theta - t.theta).abs() < 0.02, "act {a}: {f:?}");
        assert!(!report.acts[a].degenerate);
    }
    for i in 0..4 {
        for j in 0..i {
            let d = fit.sigma.get(i, j) - truth.sigma.get(i, j);
            assert!(d.abs() < 0.05, "sigma[{i}][{j}] off by {d}");
        }
    }
}

#[test]
fn zinb_fit_is_at_least_as_likely_as_zip() {
    let mut model = four_act_model();
    for m in model.margins.iter_mut() {
        *m = MarginalParams::zinb(m.lambda, 0.8, m.theta).unwrap();
    }
    let table = synthetic_survey(&model, 5000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (_, zip) = fit_model(&table, Family::Zip).unwrap();
    let (_, zinb) = fit_model(&table, Family::Zinb).unwrap();
    for (a, b) in zip.acts.iter().zip(&zinb.acts) {
        assert!(b.log_likelihood >= a.log_likelihood - 1e-9);
    }
}

#[test]
fn resampled_category_frequencies_match_the_table() {
    let model = four_act_model();
    let table = synthetic_survey(&model, 3000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let r = EmpiricalResampler::new(&table, &model).unwrap();
    let n = 100_000;
    let y = r.generate(n, &mut ChaCha8Rng::seed_from_u64(4));
    for a in 0..4 {
        let counts = table.category_counts(a);
        let total: f64 = counts.iter().sum();
        let mut got = [0.0; 4];
        for v in y.column(a) {
            got[categorize(u64::from(v)) as usize] += 1.0;
        }
        for c in 0..4 {
            let p = counts[c] / total;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((got[c] / n as f64 - p).abs() <= 4.0 * se + 1e-12, "act {a} cat {c}");
        }
    }
}

#[test]
fn imputed_counts_reproduce_their_category() {
    let model = four_act_model();
    let table = synthetic_survey(&model, 500, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let r = EmpiricalResampler::new(&table, &model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for a in 0..4 {
        for cat in 0..4u8 {
            for _ in 0..500 {
                assert_eq!(categorize(r.impute(a, cat, &mut rng)), cat);
            }
        }
    }
}

#[test]
fn weighted_resampling_follows_weights() {
    let csv = "a,b,w\n0,0,1\n3,2,3\n";
    let d = SurveyDescriptor {
        version: 1,
        mode: ResponseMode::Categories,
        acts: ["a", "b"]
            .iter()
            .map(|c| ActColumn {
                column: c.to_string(),
                label: None,
                category: ActCategory::Physical,
                severity: Severity::Moderate,
            })
            .collect(),
        weight_column: Some("w".into()),
        missing_values: vec!["NA".into()],
    };
    let t = read_survey_from_reader(csv.as_bytes(), &d).unwrap();
    let model = MultiActModel::new(
        t.acts.clone(),
        vec![MarginalParams::zip(2.0, 0.5).unwrap(); 2],
        CorrelationMatrix::identity(2),
    )
    .unwrap();
    let r = EmpiricalResampler::new(&t, &model).unwrap();
    let obs = r.resample_observed(40_000, &mut ChaCha8Rng::seed_from_u64(7));
    let share = obs.column(0).iter().filter(|&&v| v == 3).count() as f64 / 40_000.0;
    assert!((share - 0.75).abs() < 0.01, "share {share}");
}

fn table_from(rows: &[[u32; 3]], weights: Option<Vec<f64>>) -> SurveyTable {
    let model = four_act_model();
    let mut t = synthetic_survey(&model, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    t.descriptor.acts.truncate(3);
    t.acts.truncate(3);
    t.rows = ctsim_core::CountMatrix::from_rows(rows);
    t.weights = weights;
    t
}

fn sample_rows() -> Vec<[u32; 3]> {
    let model = four_act_model();
    let t = synthetic_survey(&model, 800, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    t.rows.rows().map(|r| [r[0], r[1], r[2]]).collect()
}

#[test]
fn duplicated_row_equals_double_weight() {
    let rows = sample_rows();
    let target = rows.iter().position(|r| r[0] == 3).unwrap();
    let mut dup = rows.clone();
    dup.push(rows[target]);
    let mut w = vec![1.0; rows.len()];
    w[target] = 2.0;
    let a = table_from(&dup, None);
    let b = table_from(&rows, Some(w));
    let (_, ra) = fit_model(&a, Family::Zip).unwrap();
    let (mb, rb) = fit_model(&b, Family::Zip).unwrap();
    assert!((ra.total_log_likelihood() - rb.total_log_likelihood()).abs() < 1e-10);
    assert!((marginal_log_likelihood(&a, &mb) - marginal_log_likelihood(&b, &mb)).abs() < 1e-10);
}

#[test]
fn fit_does_not_depend_on_row_order() {
    let rows = sample_rows();
    let mut rev = rows.clone();
    rev.reverse();
    let (ma, _) = fit_model(&table_from(&rows, None), Family::Zip).unwrap();
    let (mb, _) = fit_model(&table_from(&rev, None), Family::Zip).unwrap();
    for (a, b) in ma.margins.iter().zip(&mb.margins) {
        assert!((a.lambda - b.lambda).abs() < 1e-9 && (a.theta - b.theta).abs() < 1e-9);
    }
    for i in 0..3 {
        for j in 0..3 {
            assert!((ma.sigma.get(i, j) - mb.sigma.get(i, j)).abs() < 1e-9);
        }
    }
}

#[test]
fn model_file_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = four_act_model();
    std::fs::write(&path, model_to_string(&model).unwrap()).unwrap();
    assert_eq!(read_model(&path).unwrap(), model);
}

#[test]
fn survey_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let t = synthetic_survey(&four_act_model(), 200, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let path = dir.path().join("s.csv");
    write_survey(&t, &path).unwrap();
    assert_eq!(read_survey(&path, &t.descriptor).unwrap(), t);
}
