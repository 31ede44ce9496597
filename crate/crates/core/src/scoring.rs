//! Builds raw per-frame score columns for a (video, class): boundary
//! confidences from the yes/no backend and actionness from embedding
//! similarity with the class description.

use serde::{Deserialize, Serialize};

use crate::backends::{cosine_similarity, yes_probability, EmbeddingBackend, ScoringBackend};
use crate::domain::{LabelSpace, QueryTriple, ScoreSeries, VideoMeta};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::querygen::validate_triple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Extra attempts per frame after a backend error.
    pub frame_retries: u32,
    /// Largest fraction of frames that may fail and be interpolated.
    pub max_hole_fraction: f64,
    /// Frames per embedding request.
    pub embed_batch: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            frame_retries: 1,
            max_hole_fraction: 0.01,
            embed_batch: 64,
        }
    }
}

fn with_retries<T>(retries: u32, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut last = None;
    for _ in 0..=retries {
        match f() {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Fills `None` entries by linear interpolation between the nearest known
/// neighbours (constant extension at the edges). Fails if more than
/// `max_fraction` of the entries are missing or none are known.
pub fn fill_holes(
    values: Vec<Option<f64>>,
    max_fraction: f64,
    what: &str,
    first_error: Option<Error>,
) -> Result<Vec<f64>> {
    let t = values.len();
    let holes = values.iter().filter(|v| v.is_none()).count();
    if holes == 0 {
        return Ok(values.into_iter().map(|v| v.expect("no holes")).collect());
    }
    if holes as f64 > max_fraction * t as f64 || holes == t {
        let cause = first_error.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Backend(format!(
            "{what}: {holes} of {t} frames failed (limit {:.1}%): {cause}",
            max_fraction * 100.0
        )));
    }
    log::warn!("{what}: interpolating {holes} of {t} frames");
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    Ok((0..t)
        .map(|i| {
            if let Some(v) = values[i] {
                return v;
            }
            let after = known.partition_point(|(k, _)| *k < i);
            match (after.checked_sub(1).map(|j| known[j]), known.get(after)) {
                (Some((i0, v0)), Some(&(i1, v1))) => {
                    v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
                }
                (Some((_, v0)), None) => v0,
                (None, Some(&(_, v1))) => v1,
                (None, None) => unreachable!("at least one known value"),
            }
        })
        .collect())
}

/// Yes-probabilities of the start and end questions at every frame.
pub fn build_confidences(
    video: &VideoMeta,
    triple: &QueryTriple,
    class_name: &str,
    backend: &dyn ScoringBackend,
    cfg: &ScoringConfig,
    exec: Exec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_triple(triple)
        .map_err(|v| Error::Validation(format!("query for {class_name}: {}", v.join("; "))))?;
    let frames: Vec<usize> = (0..video.frame_count).collect();
    let column = |question: &str, kind: &str| -> Result<Vec<f64>> {
        let raw = exec.map(&frames, |&f| {
            with_retries(cfg.frame_retries, || {
                backend.score_frame(&video.video_id, f, class_name, question)
            })
            .map(yes_probability)
        });
        let mut first_err = None;
        let values = raw
            .into_iter()
            .map(|r| match r {
                Ok(v) => Some(v),
                Err(e) => {
                    first_err.get_or_insert(e);
                    None
                }
            })
            .collect();
        fill_holes(
            values,
            cfg.max_hole_fraction,
            &format!("{} {class_name} {kind} scores", video.video_id),
            first_err,
        )
    };
    Ok((column(&triple.q_start, "start")?, column(&triple.q_end, "end")?))
}

/// Cosine similarity of every frame embedding with the class description.
pub fn build_actionness(
    video: &VideoMeta,
    triple: &QueryTriple,
    emb: &dyn EmbeddingBackend,
    cfg: &ScoringConfig,
    exec: Exec,
) -> Result<Vec<f64>> {
    if triple.q_desc.trim().is_empty() {
        return Err(Error::Validation(format!(
            "empty description for class {}",
            triple.class_id
        )));
    }
    let text = emb
        .embed_text(std::slice::from_ref(&triple.q_desc))?
        .pop()
        .ok_or_else(|| Error::Backend("no embedding returned for description".into()))?;
    let frames: Vec<usize> = (0..video.frame_count).collect();
    let batches: Vec<&[usize]> = frames.chunks(cfg.embed_batch.max(1)).collect();
    let per_batch = exec.map(&batches, |batch| {
        let vectors = with_retries(cfg.frame_retries, || emb.embed_frames(&video.video_id, batch))?;
        vectors
            .iter()
            .map(|v| cosine_similarity(v, &text))
            .collect::<Result<Vec<f64>>>()
    });
    let mut first_err = None;
    let mut values = Vec::with_capacity(frames.len());
    for (batch, r) in batches.iter().zip(per_batch) {
        match r {
            Ok(v) => values.extend(v.into_iter().map(Some)),
            Err(e) => {
                first_err.get_or_insert(e);
                values.extend(std::iter::repeat_n(None, batch.len()));
            }
        }
    }
    fill_holes(
        values,
        cfg.max_hole_fraction,
        &format!("{} class {} actionness", video.video_id, triple.class_id),
        first_err,
    )
}

/// Score series for every selected class of one video.
#[allow(clippy::too_many_arguments)]
pub fn score_video(
    video: &VideoMeta,
    class_ids: &[usize],
    triples: &[QueryTriple],
    labels: &LabelSpace,
    scorer: &dyn ScoringBackend,
    actionness_emb: &dyn EmbeddingBackend,
    cfg: &ScoringConfig,
    exec: Exec,
) -> Result<Vec<ScoreSeries>> {
    class_ids
        .iter()
        .map(|&class_id| {
            let triple = triples
                .iter()
                .find(|t| t.class_id == class_id)
                .ok_or_else(|| Error::Validation(format!("no query triple for class {class_id}")))?;
            let name = labels.name_of(class_id)?;
            let (start_scores, end_scores) = build_confidences(video, triple, name, scorer, cfg, exec)?;
            let actionness = build_actionness(video, triple, actionness_emb, cfg, exec)?;
            Ok(ScoreSeries {
                video_id: video.video_id.clone(),
                class_id,
                start_scores,
                end_scores,
                actionness,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::backends::{EmbeddingVector, YesNoLogits};

    fn triple() -> QueryTriple {
        QueryTriple {
            class_id: 0,
            q_start: "Start?".into(),
            q_end: "End?".into(),
            q_desc: "A thing.".into(),
        }
    }

    struct Even;
    impl ScoringBackend for Even {
        fn score_frame(&self, _: &str, _: usize, _: &str, _: &str) -> Result<YesNoLogits> {
            YesNoLogits::new(0.0, 0.0)
        }
    }

    #[test]
    fn single_frame_even_logits() {
        let meta = VideoMeta::new("v", 1.0, 1.0).unwrap();
        let (s, e) = build_confidences(&meta, &triple(), "C", &Even, &ScoringConfig::default(), Exec::Sequential).unwrap();
        assert_eq!((s, e), (vec![0.5], vec![0.5]));
    }

    /// Fails on the listed frames every time.
    struct Flaky(Vec<usize>, AtomicUsize);
    impl ScoringBackend for Flaky {
        fn score_frame(&self, _: &str, f: usize, _: &str, _: &str) -> Result<YesNoLogits> {
            self.1.fetch_add(1, Ordering::SeqCst);
            if self.0.contains(&f) {
                Err(Error::Backend("boom".into()))
            } else {
                YesNoLogits::new(f as f64 * 0.01, 0.0)
            }
        }
    }

    #[test]
    fn one_percent_holes_interpolated() {
        let meta = VideoMeta::new("v", 200.0, 1.0).unwrap();
        let backend = Flaky(vec![50, 51], AtomicUsize::new(0));
        let (s, _) = build_confidences(&meta, &triple(), "C", &backend, &ScoringConfig::default(), Exec::Parallel).unwrap();
        assert_eq!(s.len(), 200);
        let p = |f: usize| yes_probability(YesNoLogits::new(f as f64 * 0.01, 0.0).unwrap());
        assert!((s[50] - (p(49) + (p(52) - p(49)) / 3.0)).abs() < 1e-12);
        // 2 failing frames x 2 attempts x 2 questions, plus 198 x 2 successes
        assert_eq!(backend.1.load(Ordering::SeqCst), 8 + 396);
    }

    #[test]
    fn too_many_holes_abort() {
        let meta = VideoMeta::new("v", 100.0, 1.0).unwrap();
        let backend = Flaky(vec![3, 4], AtomicUsize::new(0));
        let err = build_confidences(&meta, &triple(), "C", &backend, &ScoringConfig::default(), Exec::Sequential).unwrap_err();
        assert!(err.is_backend());
        assert!(err.to_string().contains("2 of 100"), "{err}");
    }

    #[test]
    fn fill_holes_edges() {
        let out = fill_holes(vec![None, Some(1.0), Some(3.0), None], 0.5, "x", None).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 3.0, 3.0]);
        assert!(fill_holes(vec![None, None], 1.0, "x", None).is_err());
    }

    struct Table;
    impl EmbeddingBackend for Table {
        fn embed_text(&self, _: &[String]) -> Result<Vec<EmbeddingVector>> {
            Ok(vec![EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap()])
        }
        fn embed_frames(&self, _: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>> {
            let table = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [3.0, 4.0, 0.0]];
            Ok(frames.iter().map(|&f| EmbeddingVector::new(table[f].to_vec()).unwrap()).collect())
        }
    }

    #[test]
    fn actionness_three_frames() {
        let meta = VideoMeta::new("v", 3.0, 1.0).unwrap();
        let cfg = ScoringConfig {
            embed_batch: 2,
            ..ScoringConfig::default()
        };
        let rho = build_actionness(&meta, &triple(), &Table, &cfg, Exec::Sequential).unwrap();
        // dot products with the unit x axis over the frame norms
        assert_eq!(rho, vec![1.0, 0.0, 0.6]);
    }
}
