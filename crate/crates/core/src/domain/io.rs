//! Readers and writers for the interchange files: annotations (JSON), score
//! files (JSON, one per video) and detections (JSON lines).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detection, GroundTruthAction, LabelSpace, ScoreSeries, VideoMeta, DEFAULT_FPS};
use crate::error::{Error, Result};

/// Everything an annotation file declares.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    pub labels: LabelSpace,
    pub videos: BTreeMap<String, VideoMeta>,
    /// Sorted by `(video_id, start)`.
    pub actions: Vec<GroundTruthAction>,
}

impl Annotations {
    /// Validates every action against its video and sorts them.
    pub fn new(
        labels: LabelSpace,
        videos: BTreeMap<String, VideoMeta>,
        mut actions: Vec<GroundTruthAction>,
    ) -> Result<Self> {
        for (i, action) in actions.iter().enumerate() {
            let meta = videos.get(&action.video_id).ok_or_else(|| {
                Error::Validation(format!(
                    "action #{i} references unknown video {:?}",
                    action.video_id
                ))
            })?;
            if action.class_id >= labels.len() {
                return Err(Error::Validation(format!(
                    "action #{i} has class id {} outside the label space",
                    action.class_id
                )));
            }
            action
                .validate(meta)
                .map_err(|e| Error::Validation(format!("action #{i}: {e}")))?;
        }
        actions.sort_by(|a, b| {
            a.video_id
                .cmp(&b.video_id)
                .then(a.start.total_cmp(&b.start))
                .then(a.end.total_cmp(&b.end))
                .then(a.class_id.cmp(&b.class_id))
        });
        Ok(Self {
            labels,
            videos,
            actions,
        })
    }

    pub fn actions_in<'a>(&'a self, video_id: &'a str) -> impl Iterator<Item = &'a GroundTruthAction> {
        self.actions.iter().filter(move |a| a.video_id == video_id)
    }

    /// Re-derives every video's frame count at a different scoring rate.
    pub fn with_fps(&self, fps: f64) -> Result<Self> {
        let videos = self
            .videos
            .values()
            .map(|m| VideoMeta::new(m.video_id.clone(), m.duration, fps).map(|v| (v.video_id.clone(), v)))
            .collect::<Result<_>>()?;
        Ok(Self {
            labels: self.labels.clone(),
            videos,
            actions: self.actions.clone(),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    videos: Vec<VideoRecord>,
    classes: Vec<String>,
    actions: Vec<ActionRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoRecord {
    id: String,
    duration_s: f64,
    #[serde(default = "default_fps")]
    fps_scored: f64,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionRecord {
    video_id: String,
    start_s: f64,
    end_s: f64,
    class: String,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

pub(crate) fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    let file: AnnotationFile = read_json_file(path)?;
    let ctx = |what: String| Error::Validation(format!("{}: {what}", path.display()));

    let labels = LabelSpace::new(&file.classes).map_err(|e| ctx(e.to_string()))?;
    let mut videos = BTreeMap::new();
    for (i, v) in file.videos.into_iter().enumerate() {
        let meta = VideoMeta::new(v.id, v.duration_s, v.fps_scored)
            .map_err(|e| ctx(format!("video #{i}: {e}")))?;
        if videos.contains_key(&meta.video_id) {
            return Err(ctx(format!("video #{i}: duplicate id {:?}", meta.video_id)));
        }
        videos.insert(meta.video_id.clone(), meta);
    }
    let actions = file
        .actions
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let class_id = labels
                .id_of(&a.class)
                .map_err(|e| ctx(format!("action #{i}: {e}")))?;
            Ok(GroundTruthAction {
                video_id: a.video_id,
                start: a.start_s,
                end: a.end_s,
                class_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Annotations::new(labels, videos, actions).map_err(|e| ctx(e.to_string()))
}

pub fn write_annotations(path: impl AsRef<Path>, ann: &Annotations) -> Result<()> {
    let file = AnnotationFile {
        videos: ann
            .videos
            .values()
            .map(|m| VideoRecord {
                id: m.video_id.clone(),
                duration_s: m.duration,
                fps_scored: m.fps_scored,
            })
            .collect(),
        classes: ann.labels.names().map(str::to_owned).collect(),
        actions: ann
            .actions
            .iter()
            .map(|a| {
                Ok(ActionRecord {
                    video_id: a.video_id.clone(),
                    start_s: a.start,
                    end_s: a.end,
                    class: ann.labels.name_of(a.class_id)?.to_owned(),
                })
            })
            .collect::<Result<_>>()?,
    };
    write_json(path.as_ref(), &file)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreFile {
    video_id: String,
    classes: Vec<ClassScores>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassScores {
    class: String,
    start_scores: Vec<f64>,
    end_scores: Vec<f64>,
    actionness: Vec<f64>,
}

/// Reads one video's raw (pre-normalization) score columns.
pub fn read_score_file(path: impl AsRef<Path>, labels: &LabelSpace) -> Result<Vec<ScoreSeries>> {
    let path = path.as_ref();
    let file: ScoreFile = read_json_file(path)?;
    file.classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let ctx = |e: Error| Error::Validation(format!("{} class #{i}: {e}", path.display()));
            let series = ScoreSeries {
                video_id: file.video_id.clone(),
                class_id: labels.id_of(&c.class).map_err(ctx)?,
                start_scores: c.start_scores,
                end_scores: c.end_scores,
                actionness: c.actionness,
            };
            series.validate(None).map_err(ctx)?;
            Ok(series)
        })
        .collect()
}

/// Writes every series of one video. All series must share `video_id`.
pub fn write_score_file(
    path: impl AsRef<Path>,
    video_id: &str,
    series: &[ScoreSeries],
    labels: &LabelSpace,
) -> Result<()> {
    let classes = series
        .iter()
        .map(|s| {
            if s.video_id != video_id {
                return Err(Error::Validation(format!(
                    "series for video {} written into score file of {video_id}",
                    s.video_id
                )));
            }
            Ok(ClassScores {
                class: labels.name_of(s.class_id)?.to_owned(),
                start_scores: s.start_scores.clone(),
                end_scores: s.end_scores.clone(),
                actionness: s.actionness.clone(),
            })
        })
        .collect::<Result<_>>()?;
    write_json(
        path.as_ref(),
        &ScoreFile {
            video_id: video_id.to_owned(),
            classes,
        },
    )
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in dets {
        serde_json::to_writer(&mut w, d).map_err(|e| Error::parse(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = format!("{} line {}", path.display(), n + 1);
        let det: Detection = serde_json::from_str(&line).map_err(|e| Error::parse(ctx.clone(), e))?;
        if !(det.start < det.end && det.score >= 0.0 && det.score.is_finite()) {
            return Err(Error::Validation(format!(
                "{ctx}: detection needs start < end and a finite score >= 0"
            )));
        }
        out.push(det);
    }
    Ok(out)
}
