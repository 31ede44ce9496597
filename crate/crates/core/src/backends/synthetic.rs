//! Ground-truth-driven backends for desk-scale end-to-end checks.
//!
//! The boundary oracle answers a start (end) question with a probability
//! that peaks at every ground-truth start (end) of the class:
//!
//! `p(t) = bg + (peak - bg) * max_b exp(-(t - b)^2 / (2 w^2)) + noise`
//!
//! clamped into (0, 1) and returned as logits whose two-way softmax is
//! exactly `p`. Noise is drawn from a generator seeded by the run seed and
//! the request key, so answers do not depend on call order.
//!
//! The embedder returns one-hot vectors: axis `c` for class `c` (texts
//! registered for the class, frames inside one of its actions), axis `K`
//! for background frames.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, EmbeddingVector, ScoringBackend, YesNoLogits};
use crate::domain::{Annotations, QueryTriple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticOracleConfig {
    /// Standard deviation of each boundary bump, in seconds.
    pub peak_width: f64,
    pub peak_height: f64,
    pub noise_std: f64,
    pub background_level: f64,
    pub seed: u64,
}

impl Default for SyntheticOracleConfig {
    fn default() -> Self {
        Self {
            peak_width: 1.5,
            peak_height: 0.9,
            noise_std: 0.0,
            background_level: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticOracleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic oracle: {m}")));
        if !(self.peak_width > 0.0 && self.peak_width.is_finite()) {
            return bad("peak_width must be > 0");
        }
        if !(self.peak_height > 0.0 && self.peak_height <= 1.0) {
            return bad("peak_height must be in (0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be >= 0");
        }
        if !(self.background_level >= 0.0 && self.background_level < 1.0) {
            return bad("background_level must be in [0, 1)");
        }
        if !(self.peak_height > self.background_level) {
            return bad("peak_height must exceed background_level");
        }
        Ok(())
    }
}

const P_MIN: f64 = 1e-6;

/// FNV-1a over the key, finished with a splitmix64 round mixed with the seed.
fn key_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn keyed_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key_seed(seed, parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Start,
    End,
}

impl BoundaryKind {
    fn tag(self) -> &'static [u8] {
        match self {
            BoundaryKind::Start => b"start",
            BoundaryKind::End => b"end",
        }
    }
}

/// Logits whose two-way softmax equals `p`.
pub fn logits_for_probability(p: f64) -> YesNoLogits {
    let p = p.clamp(P_MIN, 1.0 - P_MIN);
    YesNoLogits {
        logit_yes: (p / (1.0 - p)).ln(),
        logit_no: 0.0,
    }
}

/// Boundary-question oracle built from annotations and the query triples
/// whose questions it must recognise.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    ann: Annotations,
    cfg: SyntheticOracleConfig,
    questions: HashMap<(String, String), (usize, BoundaryKind)>,
}

impl SyntheticOracle {
    pub fn new(ann: Annotations, cfg: SyntheticOracleConfig, triples: &[QueryTriple]) -> Result<Self> {
        cfg.validate()?;
        let mut questions = HashMap::new();
        for t in triples {
            let name = ann.labels.name_of(t.class_id)?.to_owned();
            questions.insert((name.clone(), t.q_start.clone()), (t.class_id, BoundaryKind::Start));
            questions.insert((name, t.q_end.clone()), (t.class_id, BoundaryKind::End));
        }
        Ok(Self { ann, cfg, questions })
    }

    /// Noise-free probability before clamping.
    pub fn clean_probability(&self, video_id: &str, seconds: f64, class_id: usize, kind: BoundaryKind) -> f64 {
        let two_w2 = 2.0 * self.cfg.peak_width * self.cfg.peak_width;
        let bump = self
            .ann
            .actions_in(video_id)
            .filter(|a| a.class_id == class_id)
            .map(|a| match kind {
                BoundaryKind::Start => a.start,
                BoundaryKind::End => a.end,
            })
            .map(|b| (-(seconds - b).powi(2) / two_w2).exp())
            .fold(0.0, f64::max);
        self.cfg.background_level + (self.cfg.peak_height - self.cfg.background_level) * bump
    }

    pub fn probability(&self, video_id: &str, frame_idx: usize, class_id: usize, kind: BoundaryKind) -> Result<f64> {
        let meta = self
            .ann
            .videos
            .get(video_id)
            .ok_or_else(|| Error::Backend(format!("synthetic oracle: unknown video {video_id}")))?;
        let seconds = meta.frame_to_seconds(frame_idx)?;
        let mut p = self.clean_probability(video_id, seconds, class_id, kind);
        if self.cfg.noise_std > 0.0 {
            let mut rng = keyed_rng(
                self.cfg.seed,
                &[
                    video_id.as_bytes(),
                    &frame_idx.to_le_bytes(),
                    &class_id.to_le_bytes(),
                    kind.tag(),
                ],
            );
            let z: f64 = StandardNormal.sample(&mut rng);
            p += self.cfg.noise_std * z;
        }
        Ok(p.clamp(P_MIN, 1.0 - P_MIN))
    }
}

impl ScoringBackend for SyntheticOracle {
    fn score_frame(&self, video_id: &str, frame_idx: usize, class_name: &str, question: &str) -> Result<YesNoLogits> {
        let &(class_id, kind) = self
            .questions
            .get(&(class_name.to_owned(), question.to_owned()))
            .ok_or_else(|| {
                Error::Backend(format!(
                    "synthetic oracle: question {question:?} is not a boundary query of {class_name}"
                ))
            })?;
        Ok(logits_for_probability(self.probability(video_id, frame_idx, class_id, kind)?))
    }
}

/// One-hot embedder over `K + 1` axes.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    ann: Annotations,
    noise_std: f64,
    seed: u64,
    texts: HashMap<String, usize>,
}

impl SyntheticEmbedder {
    pub fn new(ann: Annotations, noise_std: f64, seed: u64) -> Self {
        Self {
            ann,
            noise_std,
            seed,
            texts: HashMap::new(),
        }
    }

    /// Makes `text` embed onto the axis of `class_id`.
    pub fn register_text(&mut self, text: impl Into<String>, class_id: usize) {
        self.texts.insert(text.into(), class_id);
    }

    pub fn dim(&self) -> usize {
        self.ann.labels.len() + 1
    }

    fn one_hot(&self, axis: usize, noise_key: Option<(&str, usize)>) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim()];
        v[axis] = 1.0;
        if let (Some((video, frame)), true) = (noise_key, self.noise_std > 0.0) {
            let mut rng = keyed_rng(self.seed, &[video.as_bytes(), &frame.to_le_bytes(), b"emb"]);
            for x in &mut v {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += self.noise_std * z;
            }
        }
        EmbeddingVector(v)
    }

    /// Class whose action covers `frame_idx`, if any (earliest start wins).
    pub fn frame_class(&self, video_id: &str, frame_idx: usize) -> Result<Option<usize>> {
        let meta = self
            .ann
            .videos
            .get(video_id)
            .ok_or_else(|| Error::Backend(format!("synthetic embedder: unknown video {video_id}")))?;
        let t = meta.frame_to_seconds(frame_idx)?;
        Ok(self
            .ann
            .actions_in(video_id)
            .find(|a| a.start <= t && t <= a.end)
            .map(|a| a.class_id))
    }
}

impl EmbeddingBackend for SyntheticEmbedder {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                self.texts
                    .get(t)
                    .map(|&c| self.one_hot(c, None))
                    .ok_or_else(|| Error::Backend(format!("synthetic embedder: unregistered text {t:?}")))
            })
            .collect()
    }

    fn embed_frames(&self, video_id: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>> {
        let background = self.ann.labels.len();
        frames
            .iter()
            .map(|&f| {
                let axis = self.frame_class(video_id, f)?.unwrap_or(background);
                Ok(self.one_hot(axis, Some((video_id, f))))
            })
            .collect()
    }
}
