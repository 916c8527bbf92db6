use std::fs::File;
use std::path::PathBuf;

use neglect_core::metrics::{
    complete_trace, compose_gaze, compute_sam, decompose_gaze, find_gaps, read_scores_csv, read_trace_csv, roc_curve, PartialSample, RocCurve,
    TraceSample,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(rel: &str) -> File {
    File::open(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)).unwrap()
}

fn random_trace(rng: &mut ChaCha8Rng, n: usize) -> Vec<TraceSample> {
    (0..n)
        .map(|i| {
            let head = rng.random_range(-60.0..60.0);
            let eye = rng.random_range(-30.0..30.0);
            TraceSample {
                t_s: 0.1 * i as f64,
                head_yaw_deg: head,
                head_pitch_deg: rng.random_range(-20.0..20.0),
                eye_yaw_deg: eye,
                eye_pitch_deg: rng.random_range(-10.0..10.0),
                gaze_yaw_deg: head + eye,
                gaze_pitch_deg: 0.0,
            }
        })
        .collect()
}

/// Scans for the extremes with explicit comparisons.
fn brute_sam(values: &[f64]) -> (f64, f64) {
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in values {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

/// Probability that a random positive outranks a random negative, ties half.
fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (&si, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (&sj, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(4..60);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    // Coarse rounding forces ties in some instances.
    let scores = labels.iter().map(|&l| ((if l { 1.0 } else { 0.0 } + rng.random_range(-1.5..1.5)) * 4.0f64).round() / 4.0).collect();
    (scores, labels)
}

#[test]
fn sam_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let n = rng.random_range(1..300);
        let trace = random_trace(&mut rng, n);
        let sam = compute_sam(&trace).unwrap();
        for (channel, values) in [
            (sam.head, trace.iter().map(|s| s.head_yaw_deg).collect::<Vec<_>>()),
            (sam.eye, trace.iter().map(|s| s.eye_yaw_deg).collect()),
            (sam.gaze_ray, trace.iter().map(|s| s.gaze_yaw_deg).collect()),
        ] {
            let (lo, hi) = brute_sam(&values);
            assert_eq!((channel.max_left_deg, channel.max_right_deg), (lo, hi));
            assert!((channel.sam_deg - (lo + hi)).abs() < 1e-12);
        }
    }
}

#[test]
fn auc_matches_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let (scores, labels) = random_scores(&mut rng);
        let roc = roc_curve(&scores, &labels).unwrap();
        assert!((roc.auc - mann_whitney(&scores, &labels)).abs() < 1e-9);
        assert_eq!(roc.thresholds[0], f64::INFINITY);
        assert_eq!(*roc.thresholds.last().unwrap(), f64::NEG_INFINITY);
        assert!(roc.thresholds.windows(2).all(|w| w[0] > w[1]));
        assert_eq!((roc.tpr[0], roc.fpr[0]), (0.0, 0.0));
        assert_eq!((*roc.tpr.last().unwrap(), *roc.fpr.last().unwrap()), (1.0, 1.0));
    }
}

#[test]
fn scores_fixture() {
    let (scores, labels) = read_scores_csv(fixture("scores/sam_head.csv")).unwrap();
    assert_eq!(scores.len(), 12);
    let roc = roc_curve(&scores, &labels).unwrap();
    assert!((roc.auc - 33.0 / 36.0).abs() < 1e-12);
    assert!((roc.cutoff - 6.8).abs() < 1e-12);
    assert!((roc.youden_j - 5.0 / 6.0).abs() < 1e-12);
    let json = serde_json::to_string(&roc).unwrap();
    assert!(json.contains("\"inf\"") && json.contains("\"-inf\""));
    let back: RocCurve = serde_json::from_str(&json).unwrap();
    assert_eq!(back, roc);
}

#[test]
fn symmetric_fixture_has_zero_sam() {
    let trace = complete_trace(&read_trace_csv(fixture("traces/symmetric.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 81);
    let sam = compute_sam(&trace).unwrap();
    for c in [sam.head, sam.eye, sam.gaze_ray] {
        assert!(c.sam_deg.abs() < 1e-9, "{c:?}");
    }
    assert_eq!((sam.head.max_left_deg, sam.head.max_right_deg), (-30.0, 30.0));
    assert_eq!((sam.eye.max_left_deg, sam.eye.max_right_deg), (-10.0, 10.0));
    assert_eq!((sam.gaze_ray.max_left_deg, sam.gaze_ray.max_right_deg), (-40.0, 40.0));
    assert!(find_gaps(&trace).is_empty());
    assert!(!sam.head_flags_neglect() && !sam.eye_flags_neglect());
}

#[test]
fn partial_fixture_derives_eye_from_gaze() {
    let partial = read_trace_csv(fixture("traces/right_bias_partial.csv")).unwrap();
    assert!(partial.iter().all(|s| s.eye_yaw_deg.is_none()));
    let trace = decompose_gaze(&partial).unwrap();
    let sam = compute_sam(&trace).unwrap();
    assert!((sam.head.sam_deg - 23.991).abs() < 1e-9);
    assert!((sam.eye.sam_deg - 7.985).abs() < 1e-9);
    assert!((sam.gaze_ray.sam_deg - 30.716).abs() < 1e-9);
    assert!(sam.head_flags_neglect() && sam.eye_flags_neglect());
}

#[test]
fn missing_channels_are_reported() {
    let s = PartialSample { t_s: 0.0, head_yaw_deg: Some(1.0), head_pitch_deg: Some(0.0), ..Default::default() };
    assert!(complete_trace(&[s]).is_err());
    assert!(compute_sam(&[]).is_err());
    assert!(roc_curve(&[1.0, 2.0], &[true, true]).is_err());
    assert!(roc_curve(&[1.0], &[true, false]).is_err());
}

#[test]
fn gaps_are_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut trace = random_trace(&mut rng, 20);
    for s in &mut trace[10..] {
        s.t_s += 0.5;
    }
    let gaps = find_gaps(&trace);
    assert_eq!(gaps.len(), 1);
    assert_eq!(gaps[0].index, 10);
    assert!((gaps[0].dt_s - 0.6).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn decompose_compose_round_trip(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = random_trace(&mut rng, n);
        let partial: Vec<PartialSample> = trace.iter().map(|&s| PartialSample { eye_yaw_deg: None, eye_pitch_deg: None, ..s.into() }).collect();
        let rebuilt = compose_gaze(&decompose_gaze(&partial).unwrap());
        for (a, b) in rebuilt.iter().zip(&trace) {
            prop_assert!((a.gaze_yaw_deg - b.gaze_yaw_deg).abs() < 1e-12);
            prop_assert!((a.eye_yaw_deg - b.eye_yaw_deg).abs() < 1e-12);
        }
    }

    #[test]
    fn sam_ignores_order_and_interior_samples(seed in any::<u64>(), n in 2usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = random_trace(&mut rng, n);
        let base = compute_sam(&trace).unwrap();
        let mut shuffled = trace.clone();
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(compute_sam(&shuffled).unwrap(), base);
        // A sample strictly inside the range changes nothing.
        let mut extra = trace.clone();
        let (lo, hi) = (base.head.max_left_deg, base.head.max_right_deg);
        let (elo, ehi) = (base.eye.max_left_deg, base.eye.max_right_deg);
        let mid = TraceSample { head_yaw_deg: 0.5 * (lo + hi), eye_yaw_deg: 0.5 * (elo + ehi), ..trace[0] };
        let mid = compose_gaze(&[mid])[0];
        prop_assume!(mid.gaze_yaw_deg >= base.gaze_ray.max_left_deg && mid.gaze_yaw_deg <= base.gaze_ray.max_right_deg);
        extra.push(mid);
        prop_assert_eq!(compute_sam(&extra).unwrap(), base);
    }

    #[test]
    fn roc_invariant_under_monotone_transform(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_scores(&mut rng);
        let a = roc_curve(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
        let b = roc_curve(&transformed, &labels).unwrap();
        prop_assert!((a.auc - b.auc).abs() < 1e-12);
        prop_assert_eq!(&a.tpr, &b.tpr);
        prop_assert_eq!(&a.fpr, &b.fpr);
        prop_assert!((a.youden_j - b.youden_j).abs() < 1e-12);
    }

    #[test]
    fn roc_invariant_under_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_scores(&mut rng);
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.shuffle(&mut rng);
        let ps: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let pl: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(roc_curve(&scores, &labels).unwrap(), roc_curve(&ps, &pl).unwrap());
    }
}
