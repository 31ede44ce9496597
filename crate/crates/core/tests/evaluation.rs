mod common;

use std::collections::BTreeSet;

use common::{brute_force_ap, det, gt};
use proptest::prelude::*;
use zeal_core::domain::{Detection, GroundTruthAction};
use zeal_core::evaluation::{average_precision, evaluate, evaluate_splits, make_splits, DEFAULT_THRESHOLDS};
use zeal_core::Exec;

fn instance(max_dets: usize, max_gt: usize) -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthAction>)> {
    let interval = (0u32..20, 1u32..8, prop::sample::select(vec!["a", "b"]));
    let dets = prop::collection::vec((interval.clone(), 0u32..6), 0..=max_dets).prop_map(|v| {
        v.into_iter()
            .map(|((s, l, vid), score)| det(vid, 0, s as f64, (s + l) as f64, score as f64 / 5.0))
            .collect()
    });
    let gts = prop::collection::vec(interval, 1..=max_gt)
        .prop_map(|v| v.into_iter().map(|(s, l, vid)| gt(vid, 0, s as f64, (s + l) as f64)).collect());
    (dets, gts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_brute_force((dets, gts) in instance(6, 4), thr in prop::sample::select(DEFAULT_THRESHOLDS.to_vec())) {
        prop_assert_eq!(average_precision(&dets, &gts, thr), brute_force_ap(&dets, &gts, thr));
    }

    #[test]
    fn stricter_threshold_never_helps((dets, gts) in instance(8, 5)) {
        let aps: Vec<f64> = DEFAULT_THRESHOLDS.iter().map(|&t| average_precision(&dets, &gts, t).unwrap()).collect();
        for w in aps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", aps);
        }
    }

    #[test]
    fn trailing_false_positive_never_helps((dets, gts) in instance(8, 5)) {
        let mut more = dets.clone();
        // lower than anything else and far from every ground truth
        more.push(det("a", 0, 100.0, 101.0, -1.0));
        for &t in &DEFAULT_THRESHOLDS {
            let before = average_precision(&dets, &gts, t).unwrap();
            let after = average_precision(&more, &gts, t).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }
}

#[test]
fn duplicate_detection_counts_once() {
    let gts = vec![gt("v", 0, 0.0, 10.0)];
    let dets = vec![det("v", 0, 0.0, 10.0, 0.9), det("v", 0, 0.0, 10.0, 0.8)];
    assert_eq!(average_precision(&dets, &gts, 0.5), Some(1.0));
    // a duplicate ranked above the true match costs precision
    let gts = vec![gt("v", 0, 0.0, 10.0), gt("v", 0, 20.0, 30.0)];
    let dets = vec![
        det("v", 0, 0.0, 10.0, 0.9),
        det("v", 0, 0.0, 10.0, 0.8),
        det("v", 0, 20.0, 30.0, 0.7),
    ];
    let ap = average_precision(&dets, &gts, 0.5).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn detections_never_cross_videos() {
    let gts = vec![gt("a", 0, 0.0, 10.0)];
    let dets = vec![det("b", 0, 0.0, 10.0, 0.9)];
    assert_eq!(average_precision(&dets, &gts, 0.3), Some(0.0));
}

#[test]
fn classes_without_ground_truth_are_excluded() {
    let gts = vec![gt("v", 0, 0.0, 10.0)];
    let dets = vec![det("v", 0, 0.0, 10.0, 0.9), det("v", 1, 0.0, 10.0, 0.9)];
    let wanted: BTreeSet<usize> = [0, 1].into();
    let report = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS, Some(&wanted), Exec::Sequential);
    assert_eq!(report.excluded_classes, vec![1]);
    assert_eq!(report.map_at, vec![1.0; 5]);
    assert_eq!(report.avg_map, 1.0);
}

#[test]
fn evaluation_is_the_same_in_every_exec_mode() {
    let gts: Vec<_> = (0..6).map(|c| gt("v", c, c as f64 * 10.0, c as f64 * 10.0 + 6.0)).collect();
    let dets: Vec<_> = (0..6)
        .flat_map(|c| [det("v", c, c as f64 * 10.0 + 1.0, c as f64 * 10.0 + 6.0, 0.5), det("v", c, 0.0, 3.0, 0.7)])
        .collect();
    let seq = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS, None, Exec::Sequential);
    assert_eq!(seq, evaluate(&dets, &gts, &DEFAULT_THRESHOLDS, None, Exec::Parallel));
    assert_eq!(seq, evaluate(&dets, &gts, &DEFAULT_THRESHOLDS, None, Exec::Bounded(2)));
}

#[test]
fn splits_are_reproducible_and_partition_the_classes() {
    let a = make_splits(20, 0.5, 10, 3).unwrap();
    assert_eq!(a, make_splits(20, 0.5, 10, 3).unwrap());
    assert_ne!(a, make_splits(20, 0.5, 10, 4).unwrap());
    for s in &a {
        assert_eq!(s.seen.len(), 10);
        assert!(s.seen.is_disjoint(&s.unseen));
        assert_eq!(s.seen.union(&s.unseen).count(), 20);
    }
    assert_eq!(make_splits(20, 0.75, 1, 3).unwrap()[0].seen.len(), 15);
    assert!(make_splits(20, 1.0, 1, 3).is_err());

    let gts: Vec<_> = (0..20).map(|c| gt("v", c, 0.0, 5.0)).collect();
    let dets: Vec<_> = (0..20).filter(|c| c % 2 == 0).map(|c| det("v", c, 0.0, 5.0, 1.0)).collect();
    let report = evaluate_splits(&dets, &gts, &[0.5], &a, Exec::Sequential);
    for (s, r) in a.iter().zip(&report.per_split) {
        let even = s.unseen.iter().filter(|c| *c % 2 == 0).count() as f64;
        assert!((r.map_at[0] - even / s.unseen.len() as f64).abs() < 1e-12);
    }
}
