//! The run configuration: one TOML file with a section per module, plus
//! dotted `key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zeal_core::backends::http::{HttpEmbedderConfig, HttpScorerConfig};
use zeal_core::evaluation::DEFAULT_THRESHOLDS;
use zeal_core::filtering::FilterConfig;
use zeal_core::localization::LocalizationConfig;
use zeal_core::querygen::QueryGenConfig;
use zeal_core::scoring::ScoringConfig;
use zeal_core::synth::SynthConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub backend: BackendConfig,
    pub querygen: QueryGenConfig,
    pub filter: FilterConfig,
    pub scoring: ScoringConfig,
    pub scorer: HttpScorerConfig,
    pub embedder: HttpEmbedderConfig,
    /// Separate embedding endpoint for actionness; falls back to `embedder`.
    pub actionness_embedder: Option<HttpEmbedderConfig>,
    pub localization: LocalizationConfig,
    pub evaluation: EvaluationConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Stage directories are created under this root.
    pub root: PathBuf,
    pub annotations: PathBuf,
    /// Scoring rate for every video, overriding the annotation file.
    pub fps: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("runs"),
            annotations: PathBuf::from("annotations.json"),
            fps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Replay,
    /// Oracle scores and one-hot embeddings derived from the annotations.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    #[default]
    Llm,
    /// Fixed templates built from the class name, no model involved.
    Synthetic,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub queries: QuerySource,
    pub replay_scores: Option<PathBuf>,
    pub replay_embeddings: Option<PathBuf>,
    pub replay_actionness_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub thresholds: Vec<f64>,
    /// Seen-class fractions of the zero-shot split protocol.
    pub seen_fractions: Vec<f64>,
    pub num_splits: usize,
    pub split_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            seen_fractions: vec![0.75, 0.5],
            num_splits: 10,
            split_seed: 0,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        Ok(cfg)
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it
/// parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not key=value");
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key segment");
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_owned()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {spec:?}: {p} is not a table"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}
