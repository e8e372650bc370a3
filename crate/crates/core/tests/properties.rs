//! Property-based invariants over randomly generated inputs.

use proptest::prelude::*;

use softlabel_core::annotations::{
    aggregate, class_weights, fleiss_kappa, AttributeSchema, Kappa,
};
use softlabel_core::evaluation::ensemble_vote;
use softlabel_core::preprocess::{normalize_tweet, PhraseLists, Segmenter};

fn vote_names(schema: &AttributeSchema, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| schema.categories[i].clone()).collect()
}

proptest! {
    // Soft labels are vote fractions: nonnegative multiples of 1/n summing to 1,
    // and the silver label always carries maximal soft mass.
    #[test]
    fn aggregation_invariants(raw in proptest::collection::vec(0usize..3, 1..9)) {
        let schema = AttributeSchema::aggression();
        let label = aggregate(&vote_names(&schema, &raw), &schema).unwrap();
        let n = raw.len() as f64;
        let sum: f64 = label.soft.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for &s in &label.soft {
            prop_assert!(s >= 0.0);
            let scaled = s * n;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        }
        // The silver label is the unique plurality winner, or the schema tie
        // default when several categories tie for the maximum (the default may
        // itself be outside the tied set, e.g. a 2-2 Not/Very tie -> Somewhat).
        let max = label.soft.iter().cloned().fold(f64::MIN, f64::max);
        let leaders = label.soft.iter().filter(|&&s| (s - max).abs() < 1e-12).count();
        if leaders == 1 {
            prop_assert!((label.soft[label.silver] - max).abs() < 1e-12);
        } else {
            prop_assert_eq!(label.silver, schema.tie_default);
        }
    }

    // Normalization is idempotent and emits only ASCII.
    #[test]
    fn normalize_idempotent(raw in "\\PC{0,60}") {
        let lists = PhraseLists::default();
        let seg = Segmenter::bundled();
        let once = normalize_tweet(&raw, &lists, seg);
        let twice = normalize_tweet(once.as_str(), &lists, seg);
        prop_assert_eq!(once.as_str(), twice.as_str());
        prop_assert!(once.as_str().is_ascii());
    }

    // Kappa stays in [-1, 1] and is invariant under category relabeling.
    #[test]
    fn kappa_bounded_and_permutation_invariant(
        rows in proptest::collection::vec(0usize..3, 2..40),
        swap in 0usize..3,
    ) {
        // Each entry selects a vote pattern for one item (3 annotators).
        let patterns = [[3usize, 0, 0], [2, 1, 0], [1, 1, 1]];
        let table: Vec<Vec<usize>> = rows.iter().map(|&r| patterns[r].to_vec()).collect();
        let k1 = fleiss_kappa(&table, 3).unwrap();
        // Swap two category columns.
        let (a, b) = (swap, (swap + 1) % 3);
        let permuted: Vec<Vec<usize>> = table
            .iter()
            .map(|row| {
                let mut r = row.clone();
                r.swap(a, b);
                r
            })
            .collect();
        let k2 = fleiss_kappa(&permuted, 3).unwrap();
        match (k1, k2) {
            (Kappa::Value(x), Kappa::Value(y)) => {
                prop_assert!((-1.0..=1.0).contains(&x), "kappa {x} out of range");
                prop_assert!((x - y).abs() < 1e-9, "not permutation invariant: {x} vs {y}");
            }
            (Kappa::Undefined { .. }, Kappa::Undefined { .. }) => {}
            other => prop_assert!(false, "definedness changed under permutation: {other:?}"),
        }
    }

    // Class weights are positive and reproduce the corpus total.
    #[test]
    fn class_weight_total(counts in proptest::collection::vec(1usize..500, 2..6)) {
        let w = class_weights(&counts).unwrap();
        let total: usize = counts.iter().sum();
        let recovered: f64 = w.iter().zip(&counts).map(|(wi, &c)| wi * c as f64).sum();
        prop_assert!((recovered - total as f64).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x > 0.0));
    }

    // Ensemble voting ignores the order of seed votes.
    #[test]
    fn ensemble_order_invariant(votes in proptest::collection::vec(0usize..3, 1..9)) {
        let (w1, t1) = ensemble_vote(&votes, 3).unwrap();
        let mut reversed = votes.clone();
        reversed.reverse();
        let (w2, t2) = ensemble_vote(&reversed, 3).unwrap();
        prop_assert_eq!(w1, w2);
        prop_assert_eq!(t1, t2);
    }
}
