//! Turns per-frame boundary confidences and actionness into detections.
//!
//! Per (video, class): normalize the start and end columns, take the top-p%
//! frames of each as candidates, pair starts with later ends, score every
//! pair, run Gaussian soft-NMS, convert to seconds and merge near-duplicates.

mod normalize;
mod proposals;
mod suppression;

use serde::{Deserialize, Serialize};

use crate::domain::{Detection, IntervalProposal, ScoreSeries, VideoMeta};
use crate::error::{Error, Result};

pub use normalize::normalize_column;
pub use proposals::{candidates, pair_candidates, score_interval, DiscardRule, PrefixSum};
pub use suppression::{merge_overlaps, soft_nms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub epsilon: f64,
    pub top_p_percent: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub merge_iou: f64,
    pub min_detection_score: f64,
    pub max_detections_per_video: usize,
    pub discard_rule: DiscardRule,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            top_p_percent: 10.0,
            lambda: 0.1,
            sigma: 1.3,
            merge_iou: 0.9,
            min_detection_score: 0.05,
            max_detections_per_video: 200,
            discard_rule: DiscardRule::default(),
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("localization: {what}")));
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad("epsilon must be in (0, 0.5)");
        }
        if !(self.top_p_percent > 0.0 && self.top_p_percent <= 100.0) {
            return bad("top_p_percent must be in (0, 100]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be > 0");
        }
        if !(self.merge_iou > 0.0 && self.merge_iou <= 1.0) {
            return bad("merge_iou must be in (0, 1]");
        }
        if !(self.min_detection_score >= 0.0) {
            return bad("min_detection_score must be >= 0");
        }
        if self.max_detections_per_video == 0 {
            return bad("max_detections_per_video must be >= 1");
        }
        Ok(())
    }
}

/// Every intermediate of one localization run, for timeline plots.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationTrace {
    pub start_norm: Vec<f64>,
    pub end_norm: Vec<f64>,
    pub start_candidates: Vec<usize>,
    pub end_candidates: Vec<usize>,
    pub num_pairs: usize,
    /// Soft-NMS survivors with their decayed scores.
    pub kept: Vec<IntervalProposal>,
    pub detections: Vec<Detection>,
}

pub fn localize_traced(
    series: &ScoreSeries,
    meta: &VideoMeta,
    cfg: &LocalizationConfig,
) -> Result<LocalizationTrace> {
    if series.video_id != meta.video_id {
        return Err(Error::Validation(format!(
            "score series for {} localized against video {}",
            series.video_id, meta.video_id
        )));
    }
    series.validate(Some(meta.frame_count))?;

    let start_norm = normalize_column(&series.start_scores, cfg.epsilon);
    let end_norm = normalize_column(&series.end_scores, cfg.epsilon);
    let start_candidates = candidates(&start_norm, cfg.top_p_percent);
    let end_candidates = candidates(&end_norm, cfg.top_p_percent);
    let pairs = pair_candidates(&start_candidates, &end_candidates, cfg.discard_rule);
    let proposals = proposals::build_proposals(
        &series.video_id,
        series.class_id,
        &pairs,
        &start_norm,
        &end_norm,
        &series.actionness,
        cfg.lambda,
    );
    let kept = soft_nms(
        &proposals,
        cfg.sigma,
        cfg.min_detection_score,
        cfg.max_detections_per_video,
    );
    let dets: Vec<Detection> = kept
        .iter()
        .map(|p| {
            Ok(Detection {
                video_id: p.video_id.clone(),
                class_id: p.class_id,
                start: meta.frame_to_seconds(p.start_idx)?,
                end: meta.frame_to_seconds(p.end_idx)?,
                score: p.phi.max(0.0),
            })
        })
        .collect::<Result<_>>()?;
    let detections = merge_overlaps(&dets, cfg.merge_iou);

    Ok(LocalizationTrace {
        start_norm,
        end_norm,
        start_candidates,
        end_candidates,
        num_pairs: pairs.len(),
        kept,
        detections,
    })
}

/// Detections for one (video, class) score series.
pub fn localize(
    series: &ScoreSeries,
    meta: &VideoMeta,
    cfg: &LocalizationConfig,
) -> Result<Vec<Detection>> {
    localize_traced(series, meta, cfg).map(|t| t.detections)
}

/// Localizes every class series of one video and keeps the
/// `max_detections_per_video` best detections, ordered by class then start.
pub fn localize_video(
    series: &[ScoreSeries],
    meta: &VideoMeta,
    cfg: &LocalizationConfig,
) -> Result<Vec<Detection>> {
    let mut all = Vec::new();
    for s in series {
        all.extend(localize(s, meta, cfg)?);
    }
    if all.len() > cfg.max_detections_per_video {
        all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.total_cmp(&b.start)));
        all.truncate(cfg.max_detections_per_video);
    }
    all.sort_by(|a, b| {
        a.class_id
            .cmp(&b.class_id)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
    });
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(start: Vec<f64>, end: Vec<f64>, act: Vec<f64>) -> ScoreSeries {
        ScoreSeries {
            video_id: "v".into(),
            class_id: 0,
            start_scores: start,
            end_scores: end,
            actionness: act,
        }
    }

    #[test]
    fn two_frame_video() {
        let meta = VideoMeta::new("v", 2.0, 1.0).unwrap();
        let s = series(vec![0.9, 0.1], vec![0.1, 0.9], vec![0.5, 0.5]);
        let dets = localize(&s, &meta, &LocalizationConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!((dets[0].start, dets[0].end), (0.0, 1.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let meta = VideoMeta::new("v", 3.0, 1.0).unwrap();
        let s = series(vec![0.9, 0.1], vec![0.1, 0.9], vec![0.5, 0.5]);
        assert!(localize(&s, &meta, &LocalizationConfig::default()).is_err());
    }

    #[test]
    fn single_frame_yields_nothing() {
        let meta = VideoMeta::new("v", 1.0, 1.0).unwrap();
        let s = series(vec![0.9], vec![0.9], vec![0.5]);
        assert!(localize(&s, &meta, &LocalizationConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(LocalizationConfig::default().validate().is_ok());
        let bad = [
            LocalizationConfig { epsilon: 0.5, ..Default::default() },
            LocalizationConfig { top_p_percent: 0.0, ..Default::default() },
            LocalizationConfig { lambda: 1.5, ..Default::default() },
            LocalizationConfig { sigma: 0.0, ..Default::default() },
            LocalizationConfig { merge_iou: 0.0, ..Default::default() },
            LocalizationConfig { max_detections_per_video: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn per_video_cap() {
        let meta = VideoMeta::new("v", 40.0, 1.0).unwrap();
        let col: Vec<f64> = (0..40).map(|i| ((i * 7919) % 40) as f64 / 40.0).collect();
        let s = series(col.clone(), col.iter().rev().cloned().collect(), vec![0.2; 40]);
        let cfg = LocalizationConfig {
            max_detections_per_video: 2,
            top_p_percent: 50.0,
            ..Default::default()
        };
        assert!(localize_video(&[s], &meta, &cfg).unwrap().len() <= 2);
    }
}
