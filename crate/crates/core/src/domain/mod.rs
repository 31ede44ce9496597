//! Core data types shared by every pipeline stage.
//!
//! Times crossing a file boundary are always seconds. Frame indices exist
//! only inside a run and are derived from [`VideoMeta::fps_scored`].

pub(crate) mod io;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_annotations, read_detections, read_score_file, write_annotations, write_detections,
    write_score_file, Annotations,
};

/// Scoring rate used when a run does not say otherwise.
pub const DEFAULT_FPS: f64 = 1.0;

const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
    pub fps_scored: f64,
    pub frame_count: usize,
}

impl VideoMeta {
    /// Builds the metadata and fixes `frame_count = max(1, floor(duration * fps))`.
    pub fn new(video_id: impl Into<String>, duration: f64, fps_scored: f64) -> Result<Self> {
        let video_id = video_id.into();
        if video_id.is_empty() {
            return Err(Error::Validation("empty video id".into()));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Validation(format!(
                "video {video_id}: duration must be > 0, got {duration}"
            )));
        }
        if !(fps_scored.is_finite() && fps_scored > 0.0) {
            return Err(Error::Validation(format!(
                "video {video_id}: fps_scored must be > 0, got {fps_scored}"
            )));
        }
        let frame_count = ((duration * fps_scored + FRAME_EPS).floor() as usize).max(1);
        Ok(Self {
            video_id,
            duration,
            fps_scored,
            frame_count,
        })
    }

    pub fn frame_to_seconds(&self, idx: usize) -> Result<f64> {
        if idx >= self.frame_count {
            return Err(Error::Validation(format!(
                "frame {idx} out of range for video {} ({} frames)",
                self.video_id, self.frame_count
            )));
        }
        Ok(idx as f64 / self.fps_scored)
    }

    /// Index of the frame covering `seconds`. Times before 0 or past the last
    /// frame map to the first or last frame.
    pub fn seconds_to_frame(&self, seconds: f64) -> usize {
        let raw = (seconds * self.fps_scored + FRAME_EPS).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.frame_count - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionClass {
    pub class_id: usize,
    pub name: String,
}

/// The closed vocabulary of action classes. Ids are dense, `0..K`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSpace {
    classes: Vec<ActionClass>,
    by_name: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(names.len());
        let mut classes = Vec::with_capacity(names.len());
        for (class_id, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if name.is_empty() {
                return Err(Error::Validation(format!("class #{class_id} has an empty name")));
            }
            if by_name.insert(name.to_owned(), class_id).is_some() {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
            classes.push(ActionClass {
                class_id,
                name: name.to_owned(),
            });
        }
        Ok(Self { classes, by_name })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ActionClass] {
        &self.classes
    }

    pub fn id_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unknown class {name:?}")))
    }

    pub fn name_of(&self, class_id: usize) -> Result<&str> {
        self.classes
            .get(class_id)
            .map(|c| c.name.as_str())
            .ok_or_else(|| Error::Validation(format!("unknown class id {class_id}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }
}

/// Start question, end question and short description for one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTriple {
    pub class_id: usize,
    pub q_start: String,
    pub q_end: String,
    pub q_desc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAction {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub class_id: usize,
}

impl GroundTruthAction {
    pub fn validate(&self, meta: &VideoMeta) -> Result<()> {
        let ok = self.start.is_finite()
            && self.end.is_finite()
            && 0.0 <= self.start
            && self.start < self.end
            && self.end <= meta.duration;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "action [{}, {}] of class {} in video {} is outside 0 <= start < end <= {}",
                self.start, self.end, self.class_id, self.video_id, meta.duration
            )))
        }
    }
}

/// Per-frame boundary confidences and actionness for one (video, class).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub class_id: usize,
    pub start_scores: Vec<f64>,
    pub end_scores: Vec<f64>,
    pub actionness: Vec<f64>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.start_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_scores.is_empty()
    }

    pub fn validate(&self, frame_count: Option<usize>) -> Result<()> {
        let t = self.start_scores.len();
        let ctx = || format!("scores for video {} class {}", self.video_id, self.class_id);
        if t == 0 || self.end_scores.len() != t || self.actionness.len() != t {
            return Err(Error::Validation(format!(
                "{}: column lengths {}/{}/{} must be equal and non-zero",
                ctx(),
                t,
                self.end_scores.len(),
                self.actionness.len()
            )));
        }
        if let Some(expected) = frame_count {
            if expected != t {
                return Err(Error::Validation(format!(
                    "{}: {t} frames but the video has {expected}",
                    ctx()
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.start_scores) || !finite(&self.end_scores) || !finite(&self.actionness) {
            return Err(Error::Validation(format!("{}: non-finite value", ctx())));
        }
        if let Some(r) = self.actionness.iter().find(|r| r.abs() > 1.0 + 1e-9) {
            return Err(Error::Validation(format!(
                "{}: actionness {r} outside [-1, 1]",
                ctx()
            )));
        }
        Ok(())
    }
}

/// A scored candidate interval in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalProposal {
    pub video_id: String,
    pub class_id: usize,
    pub start_idx: usize,
    pub end_idx: usize,
    pub phi_conf: f64,
    pub phi_actionness: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub class_id: usize,
    #[serde(rename = "start_s")]
    pub start: f64,
    #[serde(rename = "end_s")]
    pub end: f64,
    pub score: f64,
}
