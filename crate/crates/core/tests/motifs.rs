mod common;

use common::*;
use dyadic::motifs::{
    cut, distance_matrix, hierarchical_cluster, jaccard_distance, select_prototypes_from,
    silhouette, sweep_hmms, MotifId, MotifMask, SweepConfig,
};
use dyadic::seeded_rng;
use proptest::prelude::*;
use rand::Rng as _;

fn mask(bits: &[bool]) -> MotifMask {
    MotifMask::from_bools(MotifId { k: 1, state: 0 }, bits)
}

fn partition(assignment: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &a) in assignment.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

#[test]
fn jaccard_matches_brute_force() {
    let mut rng = seeded_rng(11, 0);
    for _ in 0..200 {
        let len = rng.random_range(1..200);
        let p = rng.random_range(0.0..1.0);
        let a: Vec<bool> = (0..len).map(|_| rng.random_bool(p)).collect();
        let b: Vec<bool> = (0..len).map(|_| rng.random_bool(p)).collect();
        let got = jaccard_distance(&mask(&a), &mask(&b)).unwrap();
        assert!((got - brute_jaccard(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn average_linkage_matches_brute_force() {
    let mut rng = seeded_rng(12, 0);
    for _ in 0..150 {
        let n = rng.random_range(2..10);
        let d = random_distances(n, &mut rng);
        let got = hierarchical_cluster(&d.view()).unwrap();
        let want = brute_average_linkage(&d);
        assert_eq!(got.merges.len(), want.len());
        for (m, (a, b, h, members)) in got.merges.iter().zip(&want) {
            assert_eq!((m.a, m.b), (*a, *b));
            assert!((m.height - h).abs() < 1e-9);
            assert_eq!(m.size, members.len());
        }
    }
}

#[test]
fn cut_reproduces_brute_force_partitions() {
    let mut rng = seeded_rng(13, 0);
    for _ in 0..100 {
        let n = rng.random_range(3..9);
        let d = random_distances(n, &mut rng);
        let dendro = hierarchical_cluster(&d.view()).unwrap();
        let merges = brute_average_linkage(&d);
        for c in 1..=n {
            let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
            for (_, _, _, members) in merges.iter().take(n - c) {
                groups.retain(|g| !g.iter().all(|x| members.contains(x)));
                groups.push(members.clone());
            }
            groups.sort();
            let assignment = cut(&dendro, c).unwrap();
            assert_eq!(partition(&assignment), groups);
            // Ids follow each cluster's lowest member.
            let mut firsts = Vec::new();
            for &a in &assignment {
                if !firsts.contains(&a) {
                    firsts.push(a);
                }
            }
            assert_eq!(firsts, (0..c).collect::<Vec<_>>());
        }
    }
}

#[test]
fn silhouette_matches_brute_force() {
    let mut rng = seeded_rng(14, 0);
    let mut checked = 0;
    while checked < 150 {
        let n = rng.random_range(3..12);
        let c = rng.random_range(2..=n.min(5));
        let d = random_distances(n, &mut rng);
        let assignment: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let distinct: std::collections::BTreeSet<_> = assignment.iter().collect();
        if distinct.len() < 2 {
            continue;
        }
        let (scores, mean) = silhouette(&d.view(), &assignment).unwrap();
        let want = brute_silhouette(&d, &assignment);
        for (g, w) in scores.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((mean - want.iter().sum::<f64>() / n as f64).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn relabeling_items_permutes_the_clustering() {
    let mut rng = seeded_rng(15, 0);
    for _ in 0..50 {
        let n = rng.random_range(3..9);
        let d = random_distances(n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let dp = ndarray::Array2::from_shape_fn((n, n), |(i, j)| d[[perm[i], perm[j]]]);
        let h1: Vec<f64> = hierarchical_cluster(&d.view())
            .unwrap()
            .merges
            .iter()
            .map(|m| m.height)
            .collect();
        let h2: Vec<f64> = hierarchical_cluster(&dp.view())
            .unwrap()
            .merges
            .iter()
            .map(|m| m.height)
            .collect();
        for (a, b) in h1.iter().zip(&h2) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = rng.random_range(1..=n);
        let a1 = cut(&hierarchical_cluster(&d.view()).unwrap(), c).unwrap();
        let a2 = cut(&hierarchical_cluster(&dp.view()).unwrap(), c).unwrap();
        let back: Vec<usize> = {
            let mut v = vec![0; n];
            for i in 0..n {
                v[perm[i]] = a2[i];
            }
            v
        };
        assert_eq!(partition(&a1), partition(&back));
    }
}

#[test]
fn prototype_selection_on_planted_groups() {
    // Three groups of near-duplicate masks over disjoint frame ranges.
    let mut rng = seeded_rng(16, 0);
    let n_frames = 300;
    let mut masks = Vec::new();
    for g in 0..3 {
        for s in 0..4 {
            let bits: Vec<bool> = (0..n_frames)
                .map(|t| t / 100 == g && rng.random_bool(0.9))
                .collect();
            masks.push(MotifMask::from_bools(
                MotifId {
                    k: 4,
                    state: s + 4 * g,
                },
                &bits,
            ));
        }
    }
    let d = distance_matrix(&masks).unwrap();
    let set =
        select_prototypes_from(&d.view(), masks.iter().map(|m| m.id).collect(), None).unwrap();
    assert_eq!(set.n_macro, 3);
    for m in 0..3 {
        let p = set.prototypes[m];
        assert_eq!(set.assignment[p], m);
        let members: Vec<usize> = (0..masks.len())
            .filter(|&i| set.assignment[i] == m)
            .collect();
        assert!(members
            .iter()
            .all(|&i| set.silhouette[i] <= set.silhouette[p]));
    }
}

#[test]
fn sweep_catalog_holds_one_mask_per_state() {
    let mut rng = seeded_rng(17, 0);
    let labels = planted_chain(3, 600, 0.95, &mut rng);
    let x = planted_observations(&labels, &separated_means(3, 2, 4.0), &mut rng);
    let cfg = SweepConfig {
        k_min: 2,
        k_max: 5,
        seed: 3,
        ..Default::default()
    };
    let cat = sweep_hmms(&[("a".into(), x.view())], &cfg).unwrap();
    assert_eq!(cat.len(), 2 + 3 + 4 + 5);
    // The masks of one HMM partition the frames.
    for k in 2..=5 {
        let mut cover = vec![0; 600];
        for m in cat.masks.iter().filter(|m| m.id.k == k) {
            for (t, c) in cover.iter_mut().enumerate() {
                *c += m.get(t) as usize;
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }
}

proptest! {
    #[test]
    fn jaccard_is_a_metric(
        a in proptest::collection::vec(any::<bool>(), 40),
        b in proptest::collection::vec(any::<bool>(), 40),
        c in proptest::collection::vec(any::<bool>(), 40),
    ) {
        let (ma, mb, mc) = (mask(&a), mask(&b), mask(&c));
        let ab = jaccard_distance(&ma, &mb).unwrap();
        let ba = jaccard_distance(&mb, &ma).unwrap();
        let ac = jaccard_distance(&ma, &mc).unwrap();
        let cb = jaccard_distance(&mc, &mb).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard_distance(&ma, &ma).unwrap(), 0.0);
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn merge_heights_never_decrease(seed in 0u64..1000, n in 2usize..12) {
        let mut rng = seeded_rng(seed, 1);
        let d = random_distances(n, &mut rng);
        let dendro = hierarchical_cluster(&d.view()).unwrap();
        prop_assert_eq!(dendro.merges.len(), n - 1);
        prop_assert_eq!(dendro.merges.last().unwrap().size, n);
        for w in dendro.merges.windows(2) {
            prop_assert!(w[1].height >= w[0].height - 1e-12);
        }
    }
}
