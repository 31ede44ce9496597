//! Providers of embeddings and per-frame yes/no logits.
//!
//! Each kind has three implementations: HTTP (a model server), replay (a
//! JSON file recorded from an earlier run) and a synthetic oracle that
//! fabricates signals from ground truth.

pub mod http;
pub mod replay;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-dimension embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Backend("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend("embedding has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            Self(self.0.iter().map(|v| v / n).collect())
        }
    }

    /// Arithmetic mean of equal-dimension vectors.
    pub fn mean(vectors: &[EmbeddingVector]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Backend("mean of zero embeddings".into()))?;
        let mut acc = vec![0.0; first.dim()];
        for v in vectors {
            check_dim(first.dim(), v.dim())?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        Ok(Self(acc.into_iter().map(|a| a / n).collect()))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Backend(format!(
            "embedding dimension mismatch: {expected} vs {got}"
        )))
    }
}

/// Cosine similarity in [-1, 1]; zero vectors give 0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Logits of the "yes" and "no" tokens at the first generation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YesNoLogits {
    pub logit_yes: f64,
    pub logit_no: f64,
}

impl YesNoLogits {
    pub fn new(logit_yes: f64, logit_no: f64) -> Result<Self> {
        if logit_yes.is_finite() && logit_no.is_finite() {
            Ok(Self { logit_yes, logit_no })
        } else {
            Err(Error::Backend(format!(
                "non-finite yes/no logits ({logit_yes}, {logit_no})"
            )))
        }
    }
}

/// Two-way softmax `e^ly / (e^ly + e^ln)`, computed without overflow.
pub fn yes_probability(l: YesNoLogits) -> f64 {
    let d = l.logit_yes - l.logit_no;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Text and frame embeddings from one model; every vector has the same
/// dimension.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_frames(&self, video_id: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>>;
}

/// Per-frame yes/no answers from a vision-language model.
pub trait ScoringBackend: Send + Sync {
    fn score_frame(
        &self,
        video_id: &str,
        frame_idx: usize,
        class_name: &str,
        question: &str,
    ) -> Result<YesNoLogits>;
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<T> {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_text(texts)
    }

    fn embed_frames(&self, video_id: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_frames(video_id, frames)
    }
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for Box<T> {
    fn score_frame(&self, video_id: &str, frame_idx: usize, class_name: &str, question: &str) -> Result<YesNoLogits> {
        (**self).score_frame(video_id, frame_idx, class_name, question)
    }
}

/// Prompt sent with each frame. `{class}` and `{question}` are substituted.
pub const DEFAULT_FRAME_PROMPT: &str =
    "This is a frame from a video of {class}. {question} Only answer yes or no.";

pub fn render_frame_prompt(template: &str, class_name: &str, question: &str) -> String {
    template
        .replace("{class}", class_name)
        .replace("{question}", question)
}

pub(crate) fn frame_key(video_id: &str, frame_idx: usize) -> String {
    format!("{video_id}|{frame_idx}")
}

pub(crate) fn score_key(video_id: &str, frame_idx: usize, class_name: &str, question: &str) -> String {
    format!("{video_id}|{frame_idx}|{class_name}|{question}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(y: f64, n: f64) -> YesNoLogits {
        YesNoLogits::new(y, n).unwrap()
    }

    #[test]
    fn yes_probability_examples() {
        assert_eq!(yes_probability(l(0.3, 0.3)), 0.5);
        assert!((yes_probability(l(2.0, 0.0)) - 0.8808).abs() < 1e-4);
        let sat = yes_probability(l(1000.0, -1000.0));
        assert!((sat - 1.0).abs() < 1e-12);
        assert!(yes_probability(l(-1000.0, 1000.0)) >= 0.0);
        assert!(YesNoLogits::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn cosine_basics() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let c = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(cosine_similarity(&a, &c).is_err());
        assert!(EmbeddingVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn prompt_rendering() {
        assert_eq!(
            render_frame_prompt(DEFAULT_FRAME_PROMPT, "CliffDiving", "Is it?"),
            "This is a frame from a video of CliffDiving. Is it? Only answer yes or no."
        );
    }

    proptest! {
        #[test]
        fn yes_probability_symmetry(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let p = yes_probability(l(a, b)) + yes_probability(l(b, a));
            prop_assert!((p - 1.0).abs() < 1e-12);
        }

        #[test]
        fn yes_probability_monotone(a in -15.0f64..15.0, b in -15.0f64..15.0, d in 0.01f64..5.0) {
            prop_assert!(yes_probability(l(a + d, b)) > yes_probability(l(a, b)));
            prop_assert!(yes_probability(l(a, b + d)) < yes_probability(l(a, b)));
        }
    }
}
