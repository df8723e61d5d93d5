use ctsim_core::coding::CodedOutcomes;
use ctsim_core::matrix::CountMatrix;
use ctsim_core::multivariate::{default_acts, default_model, sample_joint};
use ctsim_core::potential_outcomes::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ones(n: usize) -> CountMatrix {
    CountMatrix::from_rows(&vec![[1u32]; n])
}

#[test]
fn cessation_share_matches_its_probability() {
    let n = 100_000;
    let sc = EffectScenario::preset("cessation_only").unwrap();
    let types = assign_response_types(&ones(n), &sc, &[true], &mut ChaCha8Rng::seed_from_u64(1));
    let share = types.iter().filter(|&&t| t == ResponseType::Cessation).count() as f64 / n as f64;
    // binomial SE is 0.00145; the band is about 4 SEs
    assert!((share - 0.30).abs() < 0.006, "share {share}");
}

#[test]
fn cessation_effect_equals_share_of_units_that_stop() {
    let model = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y0 = sample_joint(&model, 5000, &mut rng).unwrap();
    let sc = EffectScenario::preset("cessation_only").unwrap();
    let mask = TargetSet::ALL.mask(&model.acts).unwrap();
    let table = PotentialOutcomeTable::generate(y0, &sc, &mask, &mut rng).unwrap();
    let stopped = table.s.iter().filter(|&&t| t == ResponseType::Cessation).count() as f64;
    let tau = table.true_estimands().tau_binary;
    assert_eq!(tau, -stopped / 5000.0);
}

#[test]
fn reduction_only_never_moves_the_binary_estimand() {
    let model = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let y0 = sample_joint(&model, 1000, &mut rng).unwrap();
        let sc = EffectScenario::preset("reduction_only").unwrap();
        let t = PotentialOutcomeTable::generate(y0, &sc, &[true; 10], &mut rng).unwrap();
        let est = t.true_estimands();
        assert_eq!(est.tau_binary, 0.0);
        assert!(est.tau_sum <= 0.0);
    }
}

#[test]
fn half_of_1680_units_are_treated() {
    let z = randomize(1680, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(z.iter().filter(|&&v| v == 1).count(), 840);
}

#[test]
fn every_unit_is_treated_half_the_time() {
    let n = 20;
    let mut hits = [0usize; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        for (h, z) in hits.iter_mut().zip(randomize(n, &mut rng).unwrap()) {
            *h += usize::from(z);
        }
    }
    for h in hits {
        assert!((h as f64 / 1e4 - 0.5).abs() < 0.02);
    }
}

#[test]
fn shifting_mass_to_cessation_strengthens_effects() {
    let model = default_model();
    let y0 = sample_joint(&model, 3000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mask = vec![true; model.k()];
    let mut prev = (0.0, 0.0);
    for step in 0..=5 {
        let c = 0.1 * step as f64;
        let sc = EffectScenario::new("shift", [0.7 - c, 0.1 + c, 0.15, 0.05]).unwrap();
        let types = assign_response_types(&y0, &sc, &mask, &mut ChaCha8Rng::seed_from_u64(7));
        let y1 = apply_effects(&y0, &types, &sc, &mask);
        let t = true_estimands(&y0, &y1);
        let cur = (t.tau_binary.abs(), t.tau_sum.abs());
        assert!(cur.0 >= prev.0 && cur.1 >= prev.1, "step {step}: {cur:?} < {prev:?}");
        prev = cur;
    }
}

#[test]
fn untargeted_acts_are_never_touched() {
    let acts = default_acts();
    let mask = TargetSet::SEXUAL.mask(&acts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y0 = sample_joint(&default_model(), 2000, &mut rng).unwrap();
    let sc = EffectScenario::preset("cessation_reduction_increase").unwrap();
    let t = PotentialOutcomeTable::generate(y0, &sc, &mask, &mut rng).unwrap();
    for i in 0..2000 {
        for (k, &m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(t.y0.get(i, k), t.y1.get(i, k));
            }
        }
    }
    t.check_invariants(&mask).unwrap();
}

fn arb_scenario() -> impl Strategy<Value = EffectScenario> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.01f64..1.0, 1u32..5, any::<bool>()).prop_map(|(a, b, c, d, x, floor_zero)| {
        let s = a + b + c + d;
        let mut sc = EffectScenario::new("random", [a / s, b / s, c / s, 1.0 - (a + b + c) / s])
            .unwrap()
            .with_magnitude(x);
        if floor_zero {
            sc.reduction_floor = ReductionFloor::Zero;
        }
        sc
    })
}

fn arb_counts() -> impl Strategy<Value = CountMatrix> {
    prop::collection::vec(prop::collection::vec(prop_oneof![3 => Just(0u32), 2 => 0u32..12], 4), 1..40)
        .prop_map(|rows| CountMatrix::from_rows(&rows))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn schedules_respect_their_invariants(y0 in arb_counts(), sc in arb_scenario(), mask in prop::collection::vec(any::<bool>(), 4), seed in any::<u64>()) {
        let types = assign_response_types(&y0, &sc, &mask, &mut ChaCha8Rng::seed_from_u64(seed));
        let y1 = apply_effects(&y0, &types, &sc, &mask);
        let z = vec![0u8; y0.n_rows()];
        let t = PotentialOutcomeTable { y0: y0.clone(), y1: y1.clone(), s: types, z };
        prop_assert!(t.check_invariants(&mask).is_ok());
        // no initiation: a zero row stays zero
        for i in 0..y0.n_rows() {
            if y0.row(i).iter().all(|&v| v == 0) {
                prop_assert!(y1.row(i).iter().all(|&v| v == 0));
            }
        }
    }

    #[test]
    fn floor_one_reductions_preserve_binary_coding(y0 in arb_counts(), x in 1u32..6, seed in any::<u64>()) {
        let sc = EffectScenario::preset("reduction_only").unwrap().with_magnitude(x);
        let mask = [true; 4];
        let types = assign_response_types(&y0, &sc, &mask, &mut ChaCha8Rng::seed_from_u64(seed));
        let y1 = apply_effects(&y0, &types, &sc, &mask);
        prop_assert_eq!(CodedOutcomes::from_latent(&y0).binary, CodedOutcomes::from_latent(&y1).binary);
    }

    #[test]
    fn revealed_outcomes_follow_assignment(y0 in arb_counts(), seed in any::<u64>()) {
        prop_assume!(y0.n_rows() >= 2);
        let sc = EffectScenario::preset("cessation_only").unwrap();
        let t = PotentialOutcomeTable::generate(y0, &sc, &[true; 4], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let y = t.reveal();
        for i in 0..y.n_rows() {
            let src = if t.z[i] == 1 { &t.y1 } else { &t.y0 };
            prop_assert_eq!(y.row(i), src.row(i));
        }
        prop_assert_eq!(t.z.iter().filter(|&&v| v == 1).count(), y.n_rows() / 2);
    }
}
