mod common;

use common::*;
use dyadic::analysis::{
    bout_stats, expand_bouts, extract_bouts, f1_coverage, filter_events, peth_signal, peth_spikes,
    transitions, unpaired_ttest, Bout, PethConfig, SpikeTrain,
};
use dyadic::seeded_rng;
use dyadic::train::eval_f1;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal};

#[test]
fn ttest_matches_exact_series() {
    let mut rng = seeded_rng(21, 0);
    for _ in 0..200 {
        let na = rng.random_range(2..15);
        let nb = rng.random_range(2..15);
        let shift = rng.random_range(-2.0..2.0);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..nb)
            .map(|_| rng.random_range(0.0..3.0) + shift)
            .collect();
        let got = unpaired_ttest(&a, &b).unwrap();
        let (t, p, df) = brute_ttest(&a, &b);
        assert!((got.t - t).abs() < 1e-9, "{} vs {t}", got.t);
        assert!((got.p - p).abs() < 1e-9, "{} vs {p}", got.p);
        assert_eq!(got.df, df);
    }
}

#[test]
fn coverage_entries_are_binary_f1() {
    let mut rng = seeded_rng(22, 0);
    for _ in 0..50 {
        let n = rng.random_range(1..200);
        let protos: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let behaviors: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let cov = f1_coverage(&protos, &behaviors, 4, 3).unwrap();
        for p in 0..4 {
            for b in 0..3 {
                let pi: Vec<usize> = protos.iter().map(|&x| (x == p) as usize).collect();
                let bi: Vec<usize> = behaviors.iter().map(|&x| (x == b) as usize).collect();
                let r = eval_f1(&pi, &bi, Some(0)).unwrap();
                let want = r.per_class.get(&1).map_or(0.0, |s| s.f1);
                assert!((cov[p][b] - want).abs() < 1e-12);
            }
        }
    }
}

/// Spikes at a baseline rate, raised to `peak` for `width_s` after each event.
fn modulated_train(
    events: &[f64],
    duration: f64,
    base: f64,
    peak: f64,
    width_s: f64,
    seed: u64,
) -> SpikeTrain {
    let mut rng = seeded_rng(seed, 0);
    // Thinning of a Poisson process at the peak rate.
    let exp = Exp::new(peak).unwrap();
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        if t >= duration {
            break;
        }
        let inside = events.iter().any(|&e| t >= e && t < e + width_s);
        let rate = if inside { peak } else { base };
        if rng.random::<f64>() < rate / peak {
            times.push(t);
        }
    }
    SpikeTrain::new("u", times, duration).unwrap()
}

#[test]
fn peth_recovers_planted_modulation() {
    let events: Vec<f64> = (0..200).map(|i| 5.0 + 4.0 * i as f64).collect();
    let duration = 5.0 + 4.0 * 200.0 + 5.0;
    let train = modulated_train(&events, duration, 5.0, 25.0, 0.5, 23);
    let cfg = PethConfig {
        window_s: 1.0,
        bin_s: 0.05,
        zscore: false,
        smooth_s: None,
    };
    let r = peth_spikes(&train, &events, &cfg).unwrap();
    assert_eq!(r.n_events, 200);
    let agg = |lo: f64, hi: f64| {
        let idx: Vec<usize> = (0..r.time_s.len())
            .filter(|&i| r.time_s[i] >= lo - 1e-9 && r.time_s[i] < hi - 1e-9)
            .collect();
        let m = idx.iter().map(|&i| r.mean[i]).sum::<f64>() / idx.len() as f64;
        let sem = idx.iter().map(|&i| r.sem[i].powi(2)).sum::<f64>().sqrt() / idx.len() as f64;
        (m, sem)
    };
    let (on, on_sem) = agg(0.0, 0.5);
    let (off, off_sem) = agg(-1.0, 0.0);
    assert!((on - 25.0).abs() <= 2.0 * on_sem, "{on} +- {on_sem}");
    assert!((off - 5.0).abs() <= 2.0 * off_sem, "{off} +- {off_sem}");
}

#[test]
fn peth_is_invariant_to_signal_offset_and_affine_under_zscore() {
    let mut rng = seeded_rng(24, 0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..500).map(|_| noise.sample(&mut rng)).collect();
    let events = [3.0, 10.0, 17.5, 30.0, 42.0];
    let raw = PethConfig {
        window_s: 1.0,
        bin_s: 0.1,
        zscore: false,
        smooth_s: None,
    };
    let a = peth_signal(&x, &events, &raw).unwrap();
    let shifted: Vec<f64> = x.iter().map(|v| v + 3.0).collect();
    let b = peth_signal(&shifted, &events, &raw).unwrap();
    for i in 0..a.mean.len() {
        assert!((b.mean[i] - a.mean[i] - 3.0).abs() < 1e-12);
        assert!((b.sem[i] - a.sem[i]).abs() < 1e-12);
    }
    let z = PethConfig {
        zscore: true,
        ..raw
    };
    let scaled: Vec<f64> = x.iter().map(|v| 2.5 * v - 7.0).collect();
    let c = peth_signal(&x, &events, &z).unwrap();
    let d = peth_signal(&scaled, &events, &z).unwrap();
    for i in 0..c.mean.len() {
        assert!((c.mean[i] - d.mean[i]).abs() < 1e-9);
    }
}

#[test]
fn bout_rate_counts_per_minute() {
    let labels = [vec![0; 30], vec![1; 60], vec![0; 30], vec![1; 30]].concat();
    let bouts = extract_bouts(&labels, 30.0);
    let s = bout_stats(&bouts, 1, 5.0).unwrap();
    assert_eq!(s.count, 2);
    assert!((s.rate_per_min - 24.0).abs() < 1e-12);
    assert!((s.mean_duration_s.unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(bout_stats(&bouts, 7, 5.0).unwrap().mean_duration_s, None);
}

fn labels_strategy() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec((0usize..4, 1usize..6), 1..40).prop_map(|runs| {
        runs.into_iter()
            .flat_map(|(l, n)| std::iter::repeat_n(l, n))
            .collect()
    })
}

proptest! {
    #[test]
    fn bouts_round_trip(labels in labels_strategy(), fps in 1.0f64..100.0) {
        let bouts = extract_bouts(&labels, fps);
        prop_assert_eq!(expand_bouts(&bouts), labels.clone());
        for w in bouts.windows(2) {
            prop_assert!(w[0].label != w[1].label);
            prop_assert_eq!(w[0].end, w[1].start);
        }
        let total: f64 = bouts.iter().map(|b| b.duration_s).sum();
        prop_assert!((total - labels.len() as f64 / fps).abs() < 1e-9);
    }

    #[test]
    fn transition_rows_are_distributions(tracks in proptest::collection::vec(labels_strategy(), 1..4)) {
        let bouts: Vec<Vec<Bout>> = tracks.iter().map(|l| extract_bouts(l, 30.0)).collect();
        let refs: Vec<&[Bout]> = bouts.iter().map(Vec::as_slice).collect();
        let m = transitions(&refs, 4).unwrap();
        for i in 0..4 {
            let s: f64 = m.probs[i].iter().sum();
            if m.empty_rows.contains(&i) {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            prop_assert_eq!(m.probs[i][i], 0.0);
        }
        // Counts agree with a direct tally over consecutive bouts.
        let mut want = vec![vec![0usize; 4]; 4];
        for b in &bouts {
            for w in b.windows(2) {
                want[w[0].label][w[1].label] += 1;
            }
        }
        prop_assert_eq!(m.counts, want);
    }

    #[test]
    fn event_filter_keeps_exactly_the_band(labels in labels_strategy()) {
        let fps = 5.0;
        let bouts = extract_bouts(&labels, fps);
        let kept = filter_events(&bouts, 0.2, 2.0);
        let frames = |b: &Bout| b.end - b.start;
        // 0.2 s and 2 s are 1 and 10 frames at 5 fps.
        let want: Vec<Bout> = bouts.iter().copied().filter(|b| (1..=10).contains(&frames(b))).collect();
        prop_assert_eq!(kept, want);
    }
}
