//! File-backed backends that answer from a recording, and wrappers that
//! produce such recordings from a live backend.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    check_dim, frame_key, score_key, EmbeddingBackend, EmbeddingVector, ScoringBackend,
    YesNoLogits,
};
use crate::domain::io::{read_json_file, write_json_file};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecording {
    pub dim: usize,
    #[serde(default)]
    pub text: BTreeMap<String, EmbeddingVector>,
    /// Keyed by `"{video_id}|{frame}"`.
    #[serde(default)]
    pub frames: BTreeMap<String, EmbeddingVector>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecording {
    /// Keyed by `"{video_id}|{frame}|{class}|{question}"`.
    pub logits: BTreeMap<String, YesNoLogits>,
}

#[derive(Debug, Clone)]
pub struct ReplayEmbedder {
    rec: EmbeddingRecording,
}

impl ReplayEmbedder {
    pub fn new(rec: EmbeddingRecording) -> Result<Self> {
        for v in rec.text.values().chain(rec.frames.values()) {
            check_dim(rec.dim, v.dim())?;
        }
        Ok(Self { rec })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_json_file(path.as_ref())?)
    }
}

impl EmbeddingBackend for ReplayEmbedder {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                self.rec
                    .text
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::Backend(format!("no recorded embedding for text {t:?}")))
            })
            .collect()
    }

    fn embed_frames(&self, video_id: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>> {
        frames
            .iter()
            .map(|&f| {
                self.rec.frames.get(&frame_key(video_id, f)).cloned().ok_or_else(|| {
                    Error::Backend(format!("no recorded embedding for {video_id} frame {f}"))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayScorer {
    rec: ScoreRecording,
}

impl ReplayScorer {
    pub fn new(rec: ScoreRecording) -> Self {
        Self { rec }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(read_json_file(path.as_ref())?))
    }
}

impl ScoringBackend for ReplayScorer {
    fn score_frame(&self, video_id: &str, frame_idx: usize, class_name: &str, question: &str) -> Result<YesNoLogits> {
        self.rec
            .logits
            .get(&score_key(video_id, frame_idx, class_name, question))
            .copied()
            .ok_or_else(|| {
                Error::Backend(format!(
                    "no recorded logits for {video_id} frame {frame_idx} class {class_name}: {question:?}"
                ))
            })
    }
}

/// Forwards to an inner embedder and remembers every answer.
pub struct RecordingEmbedder<B> {
    inner: B,
    rec: Mutex<EmbeddingRecording>,
}

impl<B: EmbeddingBackend> RecordingEmbedder<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            rec: Mutex::new(EmbeddingRecording::default()),
        }
    }

    pub fn recording(&self) -> EmbeddingRecording {
        self.rec.lock().expect("recording lock").clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_file(path.as_ref(), &self.recording())
    }

    fn remember(&self, keyed: impl Iterator<Item = (String, EmbeddingVector)>, text: bool) {
        let mut rec = self.rec.lock().expect("recording lock");
        for (k, v) in keyed {
            rec.dim = v.dim();
            if text {
                rec.text.insert(k, v);
            } else {
                rec.frames.insert(k, v);
            }
        }
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for RecordingEmbedder<B> {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let out = self.inner.embed_text(texts)?;
        self.remember(texts.iter().cloned().zip(out.iter().cloned()), true);
        Ok(out)
    }

    fn embed_frames(&self, video_id: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>> {
        let out = self.inner.embed_frames(video_id, frames)?;
        self.remember(
            frames.iter().map(|&f| frame_key(video_id, f)).zip(out.iter().cloned()),
            false,
        );
        Ok(out)
    }
}

/// Forwards to an inner scorer and remembers every answer.
pub struct RecordingScorer<B> {
    inner: B,
    rec: Mutex<ScoreRecording>,
}

impl<B: ScoringBackend> RecordingScorer<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            rec: Mutex::new(ScoreRecording::default()),
        }
    }

    pub fn recording(&self) -> ScoreRecording {
        self.rec.lock().expect("recording lock").clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_file(path.as_ref(), &self.recording())
    }
}

impl<B: ScoringBackend> ScoringBackend for RecordingScorer<B> {
    fn score_frame(&self, video_id: &str, frame_idx: usize, class_name: &str, question: &str) -> Result<YesNoLogits> {
        let l = self.inner.score_frame(video_id, frame_idx, class_name, question)?;
        self.rec
            .lock()
            .expect("recording lock")
            .logits
            .insert(score_key(video_id, frame_idx, class_name, question), l);
        Ok(l)
    }
}
