//! Gaussian soft-NMS over interval proposals and overlap merging of the
//! resulting detections.

use crate::domain::{Detection, IntervalProposal};
use crate::evaluation::temporal_iou;

fn span(p: &IntervalProposal) -> (f64, f64) {
    (p.start_idx as f64, p.end_idx as f64)
}

/// Gaussian soft non-maximum suppression on `phi`.
///
/// Repeatedly moves the highest-scoring remaining proposal to the kept set
/// and multiplies every remaining score by `exp(-iou^2 / sigma)`. Stops when
/// nothing is left or `max_keep` proposals are kept, then drops kept
/// proposals whose decayed score is below `min_score`. The returned
/// proposals carry their decayed `phi`, in selection order.
///
/// IoU is computed on frame indices; it is scale free, so the result is the
/// same as on seconds.
pub fn soft_nms(
    proposals: &[IntervalProposal],
    sigma: f64,
    min_score: f64,
    max_keep: usize,
) -> Vec<IntervalProposal> {
    let mut remaining: Vec<IntervalProposal> = proposals.to_vec();
    let mut kept = Vec::new();
    while !remaining.is_empty() && kept.len() < max_keep {
        let best = remaining
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.phi
                    .total_cmp(&b.phi)
                    .then(b.start_idx.cmp(&a.start_idx))
                    .then(b.end_idx.cmp(&a.end_idx))
            })
            .map(|(i, _)| i)
            .expect("non-empty");
        let top = remaining.swap_remove(best);
        let top_span = span(&top);
        for other in &mut remaining {
            let iou = temporal_iou(top_span, span(other));
            if iou > 0.0 {
                other.phi *= (-(iou * iou) / sigma).exp();
            }
        }
        kept.push(top);
    }
    kept.retain(|p| p.phi >= min_score);
    kept
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges detections of one (video, class) whose IoU reaches `merge_iou`.
///
/// Connected groups collapse to `(min start, max end)` with the group's best
/// score. Merging repeats until no pair reaches the threshold, so the output
/// is pairwise below `merge_iou`. Output is sorted by start.
pub fn merge_overlaps(detections: &[Detection], merge_iou: f64) -> Vec<Detection> {
    let mut current = detections.to_vec();
    loop {
        let n = current.len();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut merged_any = false;
        for i in 0..n {
            for j in i + 1..n {
                let a = &current[i];
                let b = &current[j];
                if temporal_iou((a.start, a.end), (b.start, b.end)) >= merge_iou {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[rj] = ri;
                        merged_any = true;
                    }
                }
            }
        }
        if !merged_any {
            break;
        }
        let mut groups: Vec<Option<Detection>> = vec![None; n];
        for i in 0..n {
            let root = find(&mut parent, i);
            let d = &current[i];
            match &mut groups[root] {
                Some(g) => {
                    g.start = g.start.min(d.start);
                    g.end = g.end.max(d.end);
                    g.score = g.score.max(d.score);
                }
                slot @ None => *slot = Some(d.clone()),
            }
        }
        current = groups.into_iter().flatten().collect();
    }
    current.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.end.total_cmp(&b.end))
            .then(b.score.total_cmp(&a.score))
    });
    current
}
