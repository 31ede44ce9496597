//! Temporal detection metrics and the zero-shot class-split protocol.
//!
//! AP uses greedy matching in detection-score order (each detection takes
//! the unmatched ground truth in its video with the highest IoU at or above
//! the threshold) and all-point interpolation of the precision/recall curve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Detection, GroundTruthAction};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// IoU thresholds commonly reported for temporal detection benchmarks.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

/// Intersection over union of two intervals on the real line.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Rank order used by the evaluator: score descending, then earlier start.
pub(crate) fn rank_detections<'a>(dets: &[&'a Detection]) -> Vec<&'a Detection> {
    let mut ranked = dets.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.total_cmp(&b.start))
    });
    ranked
}

/// Average precision of one class. Returns `None` when there is no ground
/// truth, in which case AP is undefined.
pub fn average_precision(
    dets: &[Detection],
    gt: &[GroundTruthAction],
    iou_thr: f64,
) -> Option<f64> {
    let dets: Vec<&Detection> = dets.iter().collect();
    let gt: Vec<&GroundTruthAction> = gt.iter().collect();
    ap_refs(&dets, &gt, iou_thr)
}

fn ap_refs(dets: &[&Detection], gt: &[&GroundTruthAction], iou_thr: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let ranked = rank_detections(dets);
    let mut matched = vec![false; gt.len()];
    let mut hits = Vec::with_capacity(ranked.len());
    for det in &ranked {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if matched[j] || g.video_id != det.video_id {
                continue;
            }
            let iou = temporal_iou((det.start, det.end), (g.start, g.end));
            if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            matched[j] = true;
        }
        hits.push(best.is_some());
    }

    let mut tp = 0usize;
    let precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(n, &hit)| {
            tp += usize::from(hit);
            tp as f64 / (n + 1) as f64
        })
        .collect();

    // Monotone envelope from the right.
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    // Recall rises by exactly 1/|gt| at every true positive.
    let area: f64 = hits
        .iter()
        .zip(&envelope)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| *p)
        .sum();
    Some(area / gt.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// AP per class, aligned with `thresholds`.
    pub per_class_ap: BTreeMap<usize, Vec<f64>>,
    /// mAP per threshold over classes with at least one ground truth.
    pub map_at: Vec<f64>,
    pub avg_map: f64,
    pub num_gt: BTreeMap<usize, usize>,
    /// Classes asked for but without ground truth, left out of the mean.
    pub excluded_classes: Vec<usize>,
}

impl EvalReport {
    pub fn map_at_threshold(&self, thr: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| (t - thr).abs() < 1e-9)
            .map(|i| self.map_at[i])
    }
}

/// Scores `dets` against `gt` for every class in `classes` (or every class
/// present in either list when `None`).
pub fn evaluate(
    dets: &[Detection],
    gt: &[GroundTruthAction],
    thresholds: &[f64],
    classes: Option<&BTreeSet<usize>>,
    exec: Exec,
) -> EvalReport {
    let wanted: BTreeSet<usize> = match classes {
        Some(c) => c.clone(),
        None => gt
            .iter()
            .map(|g| g.class_id)
            .chain(dets.iter().map(|d| d.class_id))
            .collect(),
    };
    let mut by_class_gt: BTreeMap<usize, Vec<&GroundTruthAction>> = BTreeMap::new();
    for g in gt.iter().filter(|g| wanted.contains(&g.class_id)) {
        by_class_gt.entry(g.class_id).or_default().push(g);
    }
    let mut by_class_det: BTreeMap<usize, Vec<&Detection>> = BTreeMap::new();
    for d in dets.iter().filter(|d| wanted.contains(&d.class_id)) {
        by_class_det.entry(d.class_id).or_default().push(d);
    }

    let scored: Vec<usize> = by_class_gt.keys().copied().collect();
    let rows = exec.map(&scored, |class_id| {
        let g = &by_class_gt[class_id];
        let d = by_class_det.get(class_id).map(Vec::as_slice).unwrap_or(&[]);
        thresholds
            .iter()
            .map(|&thr| ap_refs(d, g, thr).unwrap_or(0.0))
            .collect::<Vec<f64>>()
    });
    let per_class_ap: BTreeMap<usize, Vec<f64>> = scored.iter().copied().zip(rows).collect();

    let map_at: Vec<f64> = (0..thresholds.len())
        .map(|i| {
            if per_class_ap.is_empty() {
                0.0
            } else {
                per_class_ap.values().map(|r| r[i]).sum::<f64>() / per_class_ap.len() as f64
            }
        })
        .collect();
    let avg_map = if map_at.is_empty() {
        0.0
    } else {
        map_at.iter().sum::<f64>() / map_at.len() as f64
    };

    EvalReport {
        thresholds: thresholds.to_vec(),
        num_gt: by_class_gt.iter().map(|(c, g)| (*c, g.len())).collect(),
        excluded_classes: wanted.iter().copied().filter(|c| !by_class_gt.contains_key(c)).collect(),
        per_class_ap,
        map_at,
        avg_map,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub seen_fraction_pct: u32,
    pub seen: BTreeSet<usize>,
    pub unseen: BTreeSet<usize>,
}

/// Draws `num_splits` seen/unseen partitions of `0..num_classes`, with
/// `round(fraction * K)` seen classes each.
pub fn make_splits(
    num_classes: usize,
    fraction: f64,
    num_splits: usize,
    seed: u64,
) -> Result<Vec<SplitSpec>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("seen fraction must be in (0, 1), got {fraction}")));
    }
    if num_splits == 0 {
        return Err(Error::Config("need at least one split".into()));
    }
    let num_seen = (fraction * num_classes as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..num_classes).collect();
    Ok((0..num_splits)
        .map(|_| {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            SplitSpec {
                seed,
                seen_fraction_pct: (fraction * 100.0).round() as u32,
                seen: ids[..num_seen].iter().copied().collect(),
                unseen: ids[num_seen..].iter().copied().collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub splits: Vec<SplitSpec>,
    /// One report per split, restricted to its unseen classes.
    pub per_split: Vec<EvalReport>,
    pub thresholds: Vec<f64>,
    pub mean_map_at: Vec<f64>,
    pub mean_avg_map: f64,
}

/// Evaluates on the unseen partition of each split and averages.
pub fn evaluate_splits(
    dets: &[Detection],
    gt: &[GroundTruthAction],
    thresholds: &[f64],
    splits: &[SplitSpec],
    exec: Exec,
) -> SplitReport {
    let per_split: Vec<EvalReport> = splits
        .iter()
        .map(|s| evaluate(dets, gt, thresholds, Some(&s.unseen), exec))
        .collect();
    let n = per_split.len().max(1) as f64;
    let mean_map_at = (0..thresholds.len())
        .map(|i| per_split.iter().map(|r| r.map_at[i]).sum::<f64>() / n)
        .collect();
    let mean_avg_map = per_split.iter().map(|r| r.avg_map).sum::<f64>() / n;
    SplitReport {
        splits: splits.to_vec(),
        per_split,
        thresholds: thresholds.to_vec(),
        mean_map_at,
        mean_avg_map,
    }
}

/// Text table with one row per entry: `mAP@t ... Avg`, in percent.
pub fn render_table(thresholds: &[f64], rows: &[(String, Vec<f64>, f64)]) -> String {
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Method");
    for (i, t) in thresholds.iter().enumerate() {
        let head = if i == 0 { format!("mAP@{t}") } else { format!("{t}") };
        let _ = write!(out, " {head:>8}");
    }
    let _ = writeln!(out, " {:>8}", "Avg");
    for (label, map_at, avg) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for v in map_at {
            let _ = write!(out, " {:>8.1}", v * 100.0);
        }
        let _ = writeln!(out, " {:>8.1}", avg * 100.0);
    }
    out
}
