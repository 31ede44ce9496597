//! Boundary candidates, start/end pairing, and interval scoring.

use serde::{Deserialize, Serialize};

use crate::domain::IntervalProposal;

/// Indices whose score reaches the top `top_p_percent` of the column.
///
/// The threshold is the `ceil(T * p / 100)`-th largest value (at least the
/// maximum); every index at or above it is returned, so ties at the
/// threshold are all included. Output is ascending.
pub fn candidates(scores: &[f64], top_p_percent: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let t = scores.len();
    let k = ((t as f64 * top_p_percent / 100.0 - 1e-9).ceil() as usize).clamp(1, t);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Which spans count as containing a finished action followed by another
/// start, and are therefore dropped during pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardRule {
    /// Drop `(s, e)` if its open interior holds an end candidate followed by
    /// a start candidate.
    #[default]
    EndBeforeStart,
    /// Drop `(s, e)` only if two or more interior end candidates precede an
    /// interior start candidate.
    MultipleEndsBeforeStart,
}

impl DiscardRule {
    fn ends_needed(self) -> usize {
        match self {
            DiscardRule::EndBeforeStart => 1,
            DiscardRule::MultipleEndsBeforeStart => 2,
        }
    }
}

/// Pairs every start with every later end, minus the spans rejected by
/// `rule`. Inputs must be ascending; output is lexicographic.
pub fn pair_candidates(starts: &[usize], ends: &[usize], rule: DiscardRule) -> Vec<(usize, usize)> {
    debug_assert!(starts.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(ends.windows(2).all(|w| w[0] < w[1]));
    let need = rule.ends_needed();
    let mut out = Vec::new();
    for &s in starts {
        let first_end = ends.partition_point(|&e| e <= s);
        for (offset, &e) in ends[first_end..].iter().enumerate() {
            // Interior ends are ends[first_end..first_end + offset], all < e.
            if offset >= need {
                let trigger = ends[first_end + need - 1];
                // Any start strictly between `trigger` and `e`?
                let after = starts.partition_point(|&x| x <= trigger);
                if starts.get(after).is_some_and(|&x| x < e) {
                    // Growing `e` only widens the interior, so every longer
                    // span from this start is discarded too.
                    break;
                }
            }
            out.push((s, e));
        }
    }
    out
}

/// Prefix sums of a column, for O(1) inclusive range sums.
#[derive(Debug, Clone)]
pub struct PrefixSum(Vec<f64>);

impl PrefixSum {
    pub fn new(values: &[f64]) -> Self {
        let mut acc = Vec::with_capacity(values.len() + 1);
        acc.push(0.0);
        let mut running = 0.0;
        for v in values {
            running += v;
            acc.push(running);
        }
        Self(acc)
    }

    /// Sum of `values[lo..=hi]`.
    pub fn inclusive(&self, lo: usize, hi: usize) -> f64 {
        self.0[hi + 1] - self.0[lo]
    }
}

/// Scores one `(start, end)` pair.
///
/// `phi_conf` adds the normalized boundary confidences; `phi_actionness`
/// sums actionness over `start..=end` and divides by `end - start`;
/// `phi = lambda * phi_conf + (1 - lambda) * phi_actionness`.
pub fn score_interval(
    pair: (usize, usize),
    start_norm: &[f64],
    end_norm: &[f64],
    actionness: &PrefixSum,
    lambda: f64,
) -> (f64, f64, f64) {
    let (s, e) = pair;
    debug_assert!(s < e);
    let phi_conf = start_norm[s] + end_norm[e];
    let phi_actionness = actionness.inclusive(s, e) / (e - s) as f64;
    let phi = lambda * phi_conf + (1.0 - lambda) * phi_actionness;
    (phi_conf, phi_actionness, phi)
}

pub(crate) fn build_proposals(
    video_id: &str,
    class_id: usize,
    pairs: &[(usize, usize)],
    start_norm: &[f64],
    end_norm: &[f64],
    actionness: &[f64],
    lambda: f64,
) -> Vec<IntervalProposal> {
    let prefix = PrefixSum::new(actionness);
    pairs
        .iter()
        .map(|&(s, e)| {
            let (phi_conf, phi_actionness, phi) =
                score_interval((s, e), start_norm, end_norm, &prefix, lambda);
            IntervalProposal {
                video_id: video_id.to_owned(),
                class_id,
                start_idx: s,
                end_idx: e,
                phi_conf,
                phi_actionness,
                phi,
            }
        })
        .collect()
}
