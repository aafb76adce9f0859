//! Property-based invariants over the shared primitives.

use bql_core::data::{assemble_design, subvector, FeatureIndexSet};
use bql_core::deploy::{argmax_lowest, treatment_from_score};
use bql_core::synth::{logistic, pairwise_sum};
use proptest::prelude::*;

proptest! {
    #[test]
    fn subvector_respects_order_and_identity(
        x in prop::collection::vec(-1e6_f64..1e6, 1..20),
        picks in prop::collection::vec(0usize..20, 0..10),
    ) {
        let d = x.len();
        let full = FeatureIndexSet::new((1..=d).collect());
        prop_assert_eq!(subvector(&x, &full).unwrap(), x.clone());

        let idx: Vec<usize> = picks.iter().map(|p| 1 + p % d).collect();
        let set = FeatureIndexSet::new(idx);
        let sub = subvector(&x, &set).unwrap();
        prop_assert_eq!(sub.len(), set.len());
        for (pos, &i) in set.indices().iter().enumerate() {
            prop_assert_eq!(sub[pos], x[i - 1]);
        }
        // Construction order never matters.
        let mut reversed: Vec<usize> = set.indices().to_vec();
        reversed.reverse();
        prop_assert_eq!(&FeatureIndexSet::new(reversed), &set);
    }

    #[test]
    fn assemble_design_is_concatenation_plus_intercept(
        a in prop::collection::vec(-10.0_f64..10.0, 0..6),
        b in prop::collection::vec(-10.0_f64..10.0, 0..6),
        intercept in any::<bool>(),
    ) {
        let design = assemble_design(&[&a, &b], intercept);
        prop_assert_eq!(design.len(), a.len() + b.len() + usize::from(intercept));
        prop_assert_eq!(&design[..a.len()], &a[..]);
        if intercept {
            prop_assert_eq!(design.last(), Some(&1.0));
        }
    }

    #[test]
    fn logistic_is_a_symmetric_cdf(t in -700.0_f64..700.0) {
        let v = logistic(t);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((logistic(-t) - (1.0 - v)).abs() < 1e-12);
        prop_assert!(logistic(t + 0.5) >= v);
    }

    #[test]
    fn pairwise_sum_matches_naive_summation(
        v in prop::collection::vec(-1e3_f64..1e3, 0..200),
    ) {
        let naive: f64 = v.iter().sum();
        prop_assert!((pairwise_sum(&v) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
    }

    #[test]
    fn argmax_picks_the_first_maximum(
        scores in prop::collection::vec(-10.0_f64..10.0, 1..8),
    ) {
        let best = argmax_lowest(&scores);
        for (i, s) in scores.iter().enumerate() {
            prop_assert!(scores[best] >= *s);
            if *s == scores[best] {
                prop_assert!(best <= i);
            }
        }
    }

    #[test]
    fn strict_sign_rule_is_monotone(score in -5.0_f64..5.0) {
        let a = treatment_from_score(score);
        prop_assert_eq!(a, f64::from(score > 0.0));
    }
}
