use esdd_core::eval::{compute_eer, eer_from_scores};
use esdd_core::{Label, ScoreRecord};
use proptest::prelude::*;

/// Direct O(n²) sweep: every distinct score and ±∞ as a threshold, smallest
/// |FAR - FRR| first, then smallest threshold.
fn brute_force(bona: &[f64], spoof: &[f64]) -> (f64, f64) {
    let mut cands: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    cands.push(f64::NEG_INFINITY);
    cands.push(f64::INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (f64::INFINITY, f64::NAN, f64::NAN);
    for th in cands {
        let far = spoof.iter().filter(|&&s| s >= th).count() as f64 / spoof.len() as f64;
        let frr = bona.iter().filter(|&&s| s < th).count() as f64 / bona.len() as f64;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, (far + frr) / 2.0, th);
        }
    }
    (best.1, best.0)
}

fn min_gap_count(bona: &[f64], spoof: &[f64]) -> (f64, Vec<f64>) {
    let mut cands: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    cands.push(f64::INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let pts: Vec<(f64, f64)> = cands
        .iter()
        .map(|&th| {
            let far = spoof.iter().filter(|&&s| s >= th).count() as f64 / spoof.len() as f64;
            let frr = bona.iter().filter(|&&s| s < th).count() as f64 / bona.len() as f64;
            ((far - frr).abs(), (far + frr) / 2.0)
        })
        .collect();
    let g = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    (g, pts.iter().filter(|p| p.0 == g).map(|p| p.1).collect())
}

/// Scores on a coarse grid so ties within and across classes are common.
fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..12).prop_map(|k| k as f64 * 0.25 - 1.5), 1..max)
}

fn smooth_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..max)
}

fn records(bona: &[f64], spoof: &[f64]) -> Vec<ScoreRecord> {
    let mk = |i: usize, label, s: f64| ScoreRecord {
        utt_id: format!("u{i}"),
        label,
        generator: if label == Label::Bonafide {
            "-".into()
        } else {
            "g".into()
        },
        score: s,
    };
    bona.iter()
        .map(|&s| (Label::Bonafide, s))
        .chain(spoof.iter().map(|&s| (Label::Spoof, s)))
        .enumerate()
        .map(|(i, (l, s))| mk(i, l, s))
        .collect()
}

proptest! {
    #[test]
    fn matches_brute_force_sweep(bona in scores(60), spoof in scores(60)) {
        let got = eer_from_scores(&bona, &spoof).unwrap().eer;
        prop_assert_eq!(got, brute_force(&bona, &spoof).0);
    }

    #[test]
    fn bounded(bona in smooth_scores(80), spoof in smooth_scores(80)) {
        let e = eer_from_scores(&bona, &spoof).unwrap().eer;
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn invariant_under_increasing_maps(
        bona in scores(50),
        spoof in scores(50),
        a in 0.01f64..10.0,
        b in -5.0f64..5.0,
        which in 0usize..4,
    ) {
        let f = |x: f64| match which {
            0 => a * x + b,
            1 => (a * x).exp(),
            2 => x * x * x + b,
            _ => (a * x).atan() + x * 1e-3,
        };
        let e0 = eer_from_scores(&bona, &spoof).unwrap().eer;
        let mb: Vec<f64> = bona.iter().map(|&x| f(x)).collect();
        let ms: Vec<f64> = spoof.iter().map(|&x| f(x)).collect();
        prop_assert_eq!(eer_from_scores(&mb, &ms).unwrap().eer, e0);
    }

    /// Swapping labels and negating scores produce the same set of
    /// `(|FAR - FRR|, EER)` pairs, visited in opposite threshold order. The
    /// equality therefore holds whenever the gap minimizer's EER is unique;
    /// see `swap_vs_negate_tie_counterexample` for the other case.
    #[test]
    fn label_swap_matches_negation(bona in scores(40), spoof in scores(40)) {
        let swapped = compute_eer(&records(&spoof, &bona)).unwrap().eer;
        let nb: Vec<f64> = bona.iter().map(|s| -s).collect();
        let ns: Vec<f64> = spoof.iter().map(|s| -s).collect();
        let negated = compute_eer(&records(&nb, &ns)).unwrap().eer;

        let (g1, mut e1) = min_gap_count(&spoof, &bona);
        let (g2, mut e2) = min_gap_count(&nb, &ns);
        prop_assert_eq!(g1, g2);
        e1.sort_by(f64::total_cmp);
        e2.sort_by(f64::total_cmp);
        prop_assert_eq!(&e1, &e2);
        prop_assert!(e1.contains(&swapped) && e2.contains(&negated));
        if e1.iter().all(|&e| e == e1[0]) {
            prop_assert_eq!(swapped, negated);
        }
    }
}

#[test]
fn swap_vs_negate_tie_counterexample() {
    // Two thresholds tie on |FAR - FRR| = 0.5 with different (FAR + FRR) / 2;
    // "smaller threshold wins" picks opposite ends under the two transforms.
    let bona = [0.0, 2.0];
    let spoof = [1.0];
    let swapped = eer_from_scores(&spoof, &bona).unwrap();
    let negated = eer_from_scores(&[0.0, -2.0], &[-1.0]).unwrap();
    let (gap, eers) = min_gap_count(&spoof, &bona);
    assert_eq!(gap, 0.5);
    assert!(eers.contains(&swapped.eer) && eers.contains(&negated.eer));
    assert_ne!(swapped.eer, negated.eer);
}

#[test]
fn documented_fixtures() {
    assert_eq!(eer_from_scores(&[0.9, 0.8], &[0.1, 0.2]).unwrap().eer, 0.0);
    assert_eq!(eer_from_scores(&[0.3; 4], &[0.3; 5]).unwrap().eer, 0.5);
    let e = eer_from_scores(&[0.8, 0.6, 0.4], &[0.7, 0.5, 0.3]).unwrap().eer;
    assert!((e - 1.0 / 3.0).abs() < 1e-15);
}
