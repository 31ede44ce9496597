//! Whole-dataset helpers chaining the stages: scoring every selected
//! (video, class) pair, localizing every score file, and evaluating.

use std::collections::{BTreeMap, BTreeSet};

use crate::backends::{EmbeddingBackend, ScoringBackend};
use crate::domain::{Annotations, Detection, QueryTriple, ScoreSeries, VideoMeta};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::exec::Exec;
use crate::localization::{localize_video, LocalizationConfig};
use crate::scoring::{score_video, ScoringConfig};

/// Classes selected per video, e.g. from the filter stage.
pub type Selection = BTreeMap<String, Vec<usize>>;

/// Scores every video in `selection` for its selected classes. Videos run
/// under `exec`; frames within a video run sequentially.
pub fn score_videos(
    ann: &Annotations,
    selection: &Selection,
    triples: &[QueryTriple],
    scorer: &dyn ScoringBackend,
    actionness_emb: &dyn EmbeddingBackend,
    cfg: &ScoringConfig,
    exec: Exec,
) -> Result<BTreeMap<String, Vec<ScoreSeries>>> {
    let jobs: Vec<(&VideoMeta, &Vec<usize>)> = selection
        .iter()
        .map(|(v, classes)| {
            ann.videos
                .get(v)
                .map(|m| (m, classes))
                .ok_or_else(|| Error::Validation(format!("selection names unknown video {v}")))
        })
        .collect::<Result<_>>()?;
    let series = exec.try_map(&jobs, |(meta, classes)| {
        score_video(
            meta,
            classes,
            triples,
            &ann.labels,
            scorer,
            actionness_emb,
            cfg,
            Exec::Sequential,
        )
    })?;
    Ok(jobs.iter().map(|(m, _)| m.video_id.clone()).zip(series).collect())
}

/// Localizes every video's score series; detections come out ordered by
/// video, then class, then start.
pub fn localize_all(
    videos: &BTreeMap<String, VideoMeta>,
    scores: &BTreeMap<String, Vec<ScoreSeries>>,
    cfg: &LocalizationConfig,
    exec: Exec,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let jobs: Vec<(&VideoMeta, &Vec<ScoreSeries>)> = scores
        .iter()
        .map(|(v, s)| {
            videos
                .get(v)
                .map(|m| (m, s))
                .ok_or_else(|| Error::Validation(format!("scores for unknown video {v}")))
        })
        .collect::<Result<_>>()?;
    let per_video = exec.try_map(&jobs, |(meta, series)| localize_video(series, meta, cfg))?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Localizes and evaluates in one go, over `classes` or all classes.
pub fn localize_and_evaluate(
    ann: &Annotations,
    scores: &BTreeMap<String, Vec<ScoreSeries>>,
    cfg: &LocalizationConfig,
    thresholds: &[f64],
    classes: Option<&BTreeSet<usize>>,
    exec: Exec,
) -> Result<(Vec<Detection>, EvalReport)> {
    let dets = localize_all(&ann.videos, scores, cfg, exec)?;
    let report = evaluate(&dets, &ann.actions, thresholds, classes, exec);
    Ok((dets, report))
}

/// Localization parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Sigma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Sigma => "sigma",
        }
    }

    fn apply(self, cfg: &LocalizationConfig, value: f64) -> LocalizationConfig {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::Sigma => cfg.sigma = value,
        }
        cfg
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "sigma" => Ok(SweepParam::Sigma),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?} (expected lambda or sigma)"
            ))),
        }
    }
}

/// Parses `start:stop:step` into the inclusive grid `start + i * step`.
/// Values are rounded to 12 decimals so `0:1:0.1` ends exactly at 1.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("grid {spec:?} is not start:stop:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0 && start.is_finite() && stop.is_finite() && stop >= start) {
        return Err(Error::Config(format!(
            "grid {spec:?} needs step > 0 and stop >= start"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub map_at: Vec<f64>,
    pub avg_map: f64,
}

/// Localize + evaluate once per grid value.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    ann: &Annotations,
    scores: &BTreeMap<String, Vec<ScoreSeries>>,
    base: &LocalizationConfig,
    param: SweepParam,
    grid: &[f64],
    thresholds: &[f64],
    classes: Option<&BTreeSet<usize>>,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    exec.try_map(grid, |&value| {
        let cfg = param.apply(base, value);
        let (_, report) = localize_and_evaluate(ann, scores, &cfg, thresholds, classes, Exec::Sequential)?;
        Ok(SweepRow {
            value,
            map_at: report.map_at,
            avg_map: report.avg_map,
        })
    })
}

/// CSV with a header `param,map@t...,avg_map` and one row per grid value.
pub fn sweep_csv(param: SweepParam, thresholds: &[f64], rows: &[SweepRow]) -> String {
    let mut out = String::from(param.name());
    for t in thresholds {
        out.push_str(&format!(",map@{t}"));
    }
    out.push_str(",avg_map\n");
    for r in rows {
        out.push_str(&r.value.to_string());
        for m in &r.map_at {
            out.push_str(&format!(",{m}"));
        }
        out.push_str(&format!(",{}\n", r.avg_map));
    }
    out
}
