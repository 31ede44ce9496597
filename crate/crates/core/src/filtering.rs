//! Coarse per-video class filtering by frame/class-name embedding
//! similarity, and the precision/recall of that filter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backends::{cosine_similarity, EmbeddingBackend, EmbeddingVector};
use crate::domain::{ActionClass, GroundTruthAction, VideoMeta};
use crate::error::{Error, Result};
use crate::querygen::humanize_class_name;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub num_frames: usize,
    pub top_k: usize,
    /// Text embedded for each class; `{class}` becomes the humanized name.
    pub class_prompt_template: String,
    /// Skip embedding and keep exactly the classes annotated for the video.
    pub use_video_labels: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            num_frames: 8,
            top_k: 3,
            class_prompt_template: "a video of {class}".into(),
            use_video_labels: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::Config("filter: num_frames must be >= 1".into()));
        }
        if self.top_k == 0 || self.top_k > num_classes.max(1) {
            return Err(Error::Config(format!(
                "filter: top_k must be in 1..={num_classes}, got {}",
                self.top_k
            )));
        }
        if !self.class_prompt_template.contains("{class}") {
            return Err(Error::Config("filter: class prompt template lacks {class}".into()));
        }
        Ok(())
    }

    pub fn class_prompt(&self, class_name: &str) -> String {
        self.class_prompt_template
            .replace("{class}", &humanize_class_name(class_name))
    }
}

/// `n` uniformly spread frame indices over `0..frame_count`: the midpoint
/// for `n == 1`, otherwise `round(i * (T - 1) / (n - 1))` with duplicates
/// collapsed.
pub fn sample_frame_indices(meta: &VideoMeta, n: usize) -> Vec<usize> {
    let t = meta.frame_count;
    match n {
        0 => Vec::new(),
        1 => vec![t / 2],
        _ => {
            let mut out: Vec<usize> = (0..n)
                .map(|i| (i as f64 * (t - 1) as f64 / (n - 1) as f64).round() as usize)
                .collect();
            out.dedup();
            out
        }
    }
}

/// `(class_id, similarity)` sorted by similarity descending, then class id.
pub type Ranking = Vec<(usize, f64)>;

fn sort_ranking(r: &mut Ranking) {
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Ranks classes for videos against class-name embeddings computed once.
pub struct ClassFilter<'a> {
    cfg: FilterConfig,
    emb: &'a dyn EmbeddingBackend,
    classes: Vec<(usize, EmbeddingVector)>,
}

impl<'a> ClassFilter<'a> {
    pub fn new(classes: &[ActionClass], cfg: FilterConfig, emb: &'a dyn EmbeddingBackend) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Validation("class filter needs at least one class".into()));
        }
        cfg.validate(classes.len())?;
        let prompts: Vec<String> = classes.iter().map(|c| cfg.class_prompt(&c.name)).collect();
        let vectors = emb.embed_text(&prompts)?;
        Ok(Self {
            classes: classes.iter().map(|c| c.class_id).zip(vectors).collect(),
            cfg,
            emb,
        })
    }

    /// Every class, best first, using `num_frames` sampled frames.
    pub fn rank_all(&self, meta: &VideoMeta, num_frames: usize) -> Result<Ranking> {
        let frames = sample_frame_indices(meta, num_frames);
        let feats = self.emb.embed_frames(&meta.video_id, &frames)?;
        let video = EmbeddingVector::mean(&feats)?.normalized();
        let mut ranking = self
            .classes
            .iter()
            .map(|(id, v)| Ok((*id, cosine_similarity(&video, v)?)))
            .collect::<Result<Ranking>>()?;
        sort_ranking(&mut ranking);
        Ok(ranking)
    }

    /// The configured top-k classes for one video.
    pub fn filter(&self, meta: &VideoMeta) -> Result<Ranking> {
        let mut r = self.rank_all(meta, self.cfg.num_frames)?;
        r.truncate(self.cfg.top_k);
        Ok(r)
    }
}

/// Top-`top_k` classes of one video by mean-frame-embedding similarity.
pub fn filter_classes(
    video: &VideoMeta,
    classes: &[ActionClass],
    cfg: &FilterConfig,
    emb: &dyn EmbeddingBackend,
) -> Result<Ranking> {
    ClassFilter::new(classes, cfg.clone(), emb)?.filter(video)
}

/// The annotated classes of a video, each with similarity 1.
pub fn video_label_selection(video_id: &str, gt: &[GroundTruthAction]) -> Ranking {
    let classes: BTreeSet<usize> = gt
        .iter()
        .filter(|a| a.video_id == video_id)
        .map(|a| a.class_id)
        .collect();
    classes.into_iter().map(|c| (c, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub num_videos: usize,
    /// Videos without ground truth; they count toward precision only.
    pub videos_without_gt: usize,
}

/// Macro-averaged precision and recall of the top-`k` retrieved classes.
pub fn filter_metrics(
    rankings: &BTreeMap<String, Ranking>,
    gt: &[GroundTruthAction],
    k: usize,
) -> Result<FilterMetrics> {
    if k == 0 {
        return Err(Error::Config("filter metrics need k >= 1".into()));
    }
    let mut relevant: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for a in gt {
        relevant.entry(a.video_id.as_str()).or_default().insert(a.class_id);
    }
    if let Some(v) = relevant.keys().find(|v| !rankings.contains_key(**v)) {
        return Err(Error::Validation(format!("no class ranking for video {v}")));
    }
    let (mut p_sum, mut r_sum, mut r_n, mut empty) = (0.0, 0.0, 0usize, 0usize);
    for (video, ranking) in rankings {
        let retrieved: BTreeSet<usize> = ranking.iter().take(k).map(|(c, _)| *c).collect();
        let rel = relevant.get(video.as_str());
        let hits = rel.map_or(0, |r| r.intersection(&retrieved).count());
        p_sum += hits as f64 / k as f64;
        match rel {
            Some(r) if !r.is_empty() => {
                r_sum += hits as f64 / r.len() as f64;
                r_n += 1;
            }
            _ => empty += 1,
        }
    }
    let n = rankings.len();
    Ok(FilterMetrics {
        k,
        precision: if n == 0 { 0.0 } else { p_sum / n as f64 },
        recall: if r_n == 0 { 0.0 } else { r_sum / r_n as f64 },
        num_videos: n,
        videos_without_gt: empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(t: usize) -> VideoMeta {
        VideoMeta::new("v", t as f64, 1.0).unwrap()
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_frame_indices(&meta(100), 1), vec![50]);
        assert_eq!(sample_frame_indices(&meta(9), 9), (0..9).collect::<Vec<_>>());
        assert_eq!(
            sample_frame_indices(&meta(100), 8),
            vec![0, 14, 28, 42, 57, 71, 85, 99]
        );
        assert_eq!(sample_frame_indices(&meta(3), 8), vec![0, 1, 2]);
        assert_eq!(sample_frame_indices(&meta(1), 4), vec![0]);
    }

    fn gt(video: &str, class_id: usize) -> GroundTruthAction {
        GroundTruthAction {
            video_id: video.into(),
            start: 0.0,
            end: 1.0,
            class_id,
        }
    }

    #[test]
    fn metrics_single_class_hits() {
        let mut rankings = BTreeMap::new();
        let mut g = Vec::new();
        for v in 0..4 {
            let id = format!("v{v}");
            rankings.insert(id.clone(), vec![(v, 0.9), (9, 0.5), (8, 0.1)]);
            g.push(gt(&id, v));
        }
        let m = filter_metrics(&rankings, &g, 3).unwrap();
        assert_eq!(m.recall, 1.0);
        assert!((m.precision - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_all_misses() {
        let mut rankings = BTreeMap::new();
        rankings.insert("a".to_string(), vec![(5, 0.9), (6, 0.5), (7, 0.1)]);
        let m = filter_metrics(&rankings, &[gt("a", 0)], 3).unwrap();
        assert_eq!((m.precision, m.recall), (0.0, 0.0));
    }

    #[test]
    fn metrics_requires_every_gt_video() {
        assert!(filter_metrics(&BTreeMap::new(), &[gt("a", 0)], 3).is_err());
    }

    #[test]
    fn video_without_gt_is_reported() {
        let mut rankings = BTreeMap::new();
        rankings.insert("a".to_string(), vec![(0, 0.9)]);
        rankings.insert("b".to_string(), vec![(0, 0.9)]);
        let m = filter_metrics(&rankings, &[gt("a", 0)], 1).unwrap();
        assert_eq!(m.videos_without_gt, 1);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, 0.5);
    }

    #[test]
    fn label_bypass() {
        let g = vec![gt("a", 3), gt("a", 1), gt("a", 3), gt("b", 0)];
        assert_eq!(video_label_selection("a", &g), vec![(1, 1.0), (3, 1.0)]);
    }
}
