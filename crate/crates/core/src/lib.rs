//! Training-free zero-shot temporal action localization.
//!
//! The pipeline turns action class names into boundary questions, filters
//! classes per video by embedding similarity, scores every frame with a
//! yes/no vision-language backend plus an embedding-based actionness, and
//! converts those per-frame signals into scored intervals that are
//! evaluated with temporal mAP.

pub mod backends;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod filtering;
pub mod localization;
pub mod pipeline;
pub mod querygen;
pub mod scoring;
pub mod stub;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
