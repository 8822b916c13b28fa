use proptest::prelude::*;

use qsq_core::concepts::{error_rate, random_concept, AnyConcept, ConceptKind};
use qsq_core::distribution::Distribution;
use qsq_core::fourier::{walsh_hadamard_transform, BooleanFunction};
use qsq_core::learners::{goldreich_levin, learn_junta, learn_parity, LearnerSpec};
use qsq_core::oracle::{ExampleSpec, Oracle, ToleranceModel};
use qsq_core::QsqError;

fn models(seed: u64) -> Vec<ToleranceModel> {
    vec![
        ToleranceModel::Exact,
        ToleranceModel::GridAdversary { tau: 1.0 },
        ToleranceModel::Hoeffding { delta_share: 1e-4, seed },
    ]
}

#[test]
fn parity_under_every_model() {
    for seed in 0..10 {
        let AnyConcept::Parity(p) = random_concept(&ConceptKind::Parity { n: 9 }, seed).unwrap() else { unreachable!() };
        for model in models(seed) {
            let mut oracle = Oracle::new(ExampleSpec::uniform(&p).unwrap(), model.clone()).unwrap();
            let report = learn_parity(&mut oracle).unwrap();
            assert_eq!(report.recovered_parity, Some(p.s), "{model:?}");
            assert_eq!(oracle.log().len(), 9);
            assert!(oracle.log().violations().is_empty());
        }
    }
}

#[test]
fn junta_under_sampling() {
    for seed in 0..4 {
        let c = random_concept(&ConceptKind::Junta { n: 7, k: 2 }, seed).unwrap();
        let mut oracle =
            Oracle::new(ExampleSpec::uniform(&c).unwrap(), ToleranceModel::Hoeffding { delta_share: 1e-3, seed }).unwrap();
        let report = learn_junta(&mut oracle, 2, 0.2).unwrap();
        let err = error_rate(&report.hypothesis, &c, &Distribution::uniform(7).unwrap()).unwrap();
        assert!(err <= 0.2, "seed {seed}: {err}");
    }
}

#[test]
fn learners_reject_noisy_or_skewed_examples() {
    let p = random_concept(&ConceptKind::Parity { n: 4 }, 1).unwrap();
    let noisy = ExampleSpec::new(&p, Distribution::uniform(4).unwrap(), 0.05).unwrap();
    assert!(matches!(learn_parity(&mut Oracle::exact(noisy)), Err(QsqError::Unsupported(_))));
    let skew = Distribution::from_weights(4, (1..=16).map(|w| w as f64).collect()).unwrap();
    let skewed = ExampleSpec::new(&p, skew, 0.0).unwrap();
    assert!(matches!(goldreich_levin(&mut Oracle::exact(skewed), 0.5), Err(QsqError::Unsupported(_))));
}

#[test]
fn learner_spec_round_trip() {
    let spec: LearnerSpec = serde_json::from_str(r#"{"learner":"junta","k":3,"eps":0.1}"#).unwrap();
    assert_eq!(spec, LearnerSpec::Junta { k: 3, eps: 0.1 });
    assert_eq!(serde_json::from_str::<LearnerSpec>(&serde_json::to_string(&spec).unwrap()).unwrap(), spec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gl_matches_brute_force(values in prop::collection::vec(prop::bool::ANY, 64), tau in 0.3f64..0.9) {
        let f = BooleanFunction::new(6, values.iter().map(|&b| if b { 1 } else { -1 }).collect()).unwrap();
        let spectrum = walsh_hadamard_transform(&f);
        let mut oracle = Oracle::new(ExampleSpec::uniform(&f).unwrap(), ToleranceModel::GridAdversary { tau: 1.0 }).unwrap();
        let report = goldreich_levin(&mut oracle, tau).unwrap();
        for s in 0..64usize {
            let c = spectrum.coefficient(s).abs();
            if c >= tau {
                prop_assert!(report.sets.contains(&s));
            }
            if report.sets.contains(&s) {
                prop_assert!(c >= tau / 2.0);
            }
        }
        prop_assert!(report.queries_used as f64 <= qsq_core::learners::GlReport::query_bound(6, tau, report.sets.len()));
    }

    #[test]
    fn parity_is_exact_for_any_target(n in 1usize..=12, raw in any::<usize>()) {
        let s = raw & ((1 << n) - 1);
        let f = BooleanFunction::parity(n, s).unwrap();
        let mut oracle = Oracle::new(ExampleSpec::uniform(&f).unwrap(), ToleranceModel::GridAdversary { tau: 1.0 / 6.0 }).unwrap();
        prop_assert_eq!(learn_parity(&mut oracle).unwrap().recovered_parity, Some(s));
    }
}
