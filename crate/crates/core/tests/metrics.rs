mod common;

use common::*;
use dyadic::seeded_rng;
use dyadic::train::{eval_f1, eval_nmi};
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn f1_matches_brute_force() {
    let mut rng = seeded_rng(31, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..300);
        let k = rng.random_range(1..6);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let excluded = rng.random_bool(0.5).then(|| rng.random_range(0..k));
        let got = eval_f1(&pred, &truth, excluded).unwrap();
        let (per, macro_f1) = brute_f1(&pred, &truth, excluded);
        assert_eq!(got.per_class.len(), per.len());
        for (c, f) in per {
            assert!((got.per_class[&c].f1 - f).abs() < 1e-12);
        }
        assert!((got.macro_f1 - macro_f1).abs() < 1e-12);
    }
}

#[test]
fn nmi_matches_brute_force() {
    let mut rng = seeded_rng(32, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..300);
        let ka = rng.random_range(1..6);
        let kb = rng.random_range(1..6);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n)
            .map(|i| {
                if rng.random_bool(0.6) {
                    a[i] % kb
                } else {
                    rng.random_range(0..kb)
                }
            })
            .collect();
        let got = eval_nmi(&a, &b).unwrap();
        assert!((got - brute_nmi(&a, &b)).abs() < 1e-12, "{got}");
        assert!((0.0..=1.0 + 1e-12).contains(&got));
    }
}

proptest! {
    #[test]
    fn nmi_is_symmetric_and_label_free(
        a in proptest::collection::vec(0usize..5, 1..100),
        seed in 0u64..1000,
    ) {
        let mut rng = seeded_rng(seed, 0);
        let b: Vec<usize> = a.iter().map(|&x| if rng.random_bool(0.7) { x } else { rng.random_range(0..5) }).collect();
        let ab = eval_nmi(&a, &b).unwrap();
        prop_assert!((ab - eval_nmi(&b, &a).unwrap()).abs() < 1e-12);
        // Renaming labels leaves the score unchanged.
        let renamed: Vec<usize> = b.iter().map(|&x| 10 + (x * 3) % 5).collect();
        prop_assert!((ab - eval_nmi(&a, &renamed).unwrap()).abs() < 1e-12);
        let distinct: std::collections::BTreeSet<_> = a.iter().collect();
        if distinct.len() > 1 {
            prop_assert!((eval_nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_scores_one(truth in proptest::collection::vec(0usize..4, 1..100)) {
        let r = eval_f1(&truth, &truth, None).unwrap();
        prop_assert!((r.macro_f1 - 1.0).abs() < 1e-12);
    }
}
