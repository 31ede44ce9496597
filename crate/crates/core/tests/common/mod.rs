//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::path::PathBuf;

use zeal_core::domain::{Detection, GroundTruthAction, IntervalProposal};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = if a.0 > b.0 { a.0 } else { b.0 };
    let hi = if a.1 < b.1 { a.1 } else { b.1 };
    if hi > lo {
        let inter = hi - lo;
        inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
    } else {
        0.0
    }
}

/// True-positive flags for the first `n` ranked detections, rebuilt from
/// scratch by scanning every ground truth for each detection.
fn prefix_hits(ranked: &[&Detection], gt: &[GroundTruthAction], thr: f64, n: usize) -> usize {
    let mut taken = vec![false; gt.len()];
    let mut tp = 0;
    for det in &ranked[..n] {
        let mut pick = None;
        let mut pick_iou = -1.0;
        for (j, g) in gt.iter().enumerate() {
            if taken[j] || g.video_id != det.video_id {
                continue;
            }
            let iou = overlap((det.start, det.end), (g.start, g.end));
            if iou >= thr && iou > pick_iou {
                pick = Some(j);
                pick_iou = iou;
            }
        }
        if let Some(j) = pick {
            taken[j] = true;
            tp += 1;
        }
    }
    tp
}

/// AP by enumerating recall levels: for each k in 1..=G, the best precision
/// over all cut-offs whose recall reaches k/G; averaged over G.
pub fn brute_force_ap(dets: &[Detection], gt: &[GroundTruthAction], thr: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.start.partial_cmp(&b.start).unwrap()));
    let cut: Vec<(usize, f64)> = (1..=ranked.len())
        .map(|n| {
            let tp = prefix_hits(&ranked, gt, thr, n);
            (tp, tp as f64 / n as f64)
        })
        .collect();
    let mut total = 0.0;
    for k in 1..=gt.len() {
        let best = cut
            .iter()
            .filter(|(tp, _)| *tp >= k)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        total += best;
    }
    Some(total / gt.len() as f64)
}

/// Classic hard NMS at IoU threshold 0+: anything touching a kept interval
/// with positive overlap is discarded.
pub fn hard_nms(proposals: &[IntervalProposal], min_score: f64) -> Vec<IntervalProposal> {
    let mut order: Vec<&IntervalProposal> = proposals.iter().collect();
    order.sort_by(|a, b| {
        b.phi
            .partial_cmp(&a.phi)
            .unwrap()
            .then(a.start_idx.cmp(&b.start_idx))
            .then(a.end_idx.cmp(&b.end_idx))
    });
    let mut kept: Vec<IntervalProposal> = Vec::new();
    for p in order {
        let clash = kept.iter().any(|k| k.start_idx.max(p.start_idx) < k.end_idx.min(p.end_idx));
        if !clash {
            kept.push(p.clone());
        }
    }
    kept.retain(|p| p.phi >= min_score);
    kept
}

pub fn det(video: &str, class_id: usize, start: f64, end: f64, score: f64) -> Detection {
    Detection {
        video_id: video.into(),
        class_id,
        start,
        end,
        score,
    }
}

pub fn gt(video: &str, class_id: usize, start: f64, end: f64) -> GroundTruthAction {
    GroundTruthAction {
        video_id: video.into(),
        class_id,
        start,
        end,
    }
}
