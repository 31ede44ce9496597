//! Seeded synthetic datasets: random untrimmed-video layouts, model-free
//! queries, and oracle score series generated from the layout itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::synthetic::{SyntheticEmbedder, SyntheticOracle, SyntheticOracleConfig};
use crate::domain::{Annotations, GroundTruthAction, LabelSpace, QueryTriple, ScoreSeries, VideoMeta};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::filtering::{video_label_selection, FilterConfig};
use crate::pipeline::score_videos;
use crate::querygen::synthetic_triple;
use crate::scoring::ScoringConfig;

/// Class vocabulary of the usual 20-class sports benchmark.
pub const SPORTS_CLASSES: [&str; 20] = [
    "BaseballPitch",
    "BasketballDunk",
    "Billiards",
    "CleanAndJerk",
    "CliffDiving",
    "CricketBowling",
    "CricketShot",
    "Diving",
    "FrisbeeCatch",
    "GolfSwing",
    "HammerThrow",
    "HighJump",
    "JavelinThrow",
    "LongJump",
    "PoleVault",
    "Shotput",
    "SoccerPenalty",
    "TennisSwing",
    "ThrowDiscus",
    "VolleyballSpiking",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_classes: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    /// All actions of a video share one class, as in most untrimmed
    /// sports benchmarks; otherwise each action draws its own class.
    pub single_class_videos: bool,
    /// Action length range in seconds.
    pub min_action_s: f64,
    pub max_action_s: f64,
    /// Background gap range in seconds (before, between and after actions).
    pub min_gap_s: f64,
    pub max_gap_s: f64,
    pub fps: f64,
    /// Seed of the layout; the oracle noise has its own seed.
    pub seed: u64,
    pub oracle: SyntheticOracleConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 20,
            num_classes: 20,
            min_actions: 1,
            max_actions: 3,
            single_class_videos: true,
            min_action_s: 15.0,
            max_action_s: 30.0,
            min_gap_s: 5.0,
            max_gap_s: 10.0,
            fps: 1.0,
            seed: 7,
            oracle: SyntheticOracleConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.num_videos == 0 || self.num_classes == 0 {
            return bad("need at least one video and one class".into());
        }
        if self.min_actions == 0 || self.min_actions > self.max_actions {
            return bad(format!(
                "action count range {}..={} is empty or starts at 0",
                self.min_actions, self.max_actions
            ));
        }
        if !(self.min_action_s > 0.0 && self.min_action_s <= self.max_action_s) {
            return bad("action length range must be positive and ordered".into());
        }
        // Boundaries of consecutive actions must stay apart so each keeps its own peak.
        if !(self.min_gap_s > 2.0 * self.oracle.peak_width && self.min_gap_s <= self.max_gap_s) {
            return bad(format!(
                "gaps must exceed twice the peak width ({} s) and be ordered",
                2.0 * self.oracle.peak_width
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be > 0".into());
        }
        self.oracle.validate()
    }
}

/// Names for `k` classes: the sports vocabulary first, then `Action21`, ...
pub fn class_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| match SPORTS_CLASSES.get(i) {
            Some(n) => (*n).to_owned(),
            None => format!("Action{}", i + 1),
        })
        .collect()
}

fn tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Random video layouts with non-overlapping actions separated by
/// background gaps. Times are multiples of 0.1 s.
pub fn generate_annotations(cfg: &SynthConfig) -> Result<Annotations> {
    cfg.validate()?;
    let labels = LabelSpace::new(&class_names(cfg.num_classes))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut videos = BTreeMap::new();
    let mut actions = Vec::new();
    for v in 0..cfg.num_videos {
        let video_id = format!("video_{v:03}");
        let n = rng.random_range(cfg.min_actions..=cfg.max_actions);
        let video_class = rng.random_range(0..cfg.num_classes);
        let mut t = tenth(rng.random_range(cfg.min_gap_s..=cfg.max_gap_s));
        for _ in 0..n {
            let len = tenth(rng.random_range(cfg.min_action_s..=cfg.max_action_s));
            actions.push(GroundTruthAction {
                video_id: video_id.clone(),
                start: t,
                end: tenth(t + len),
                class_id: if cfg.single_class_videos {
                    video_class
                } else {
                    rng.random_range(0..cfg.num_classes)
                },
            });
            t = tenth(t + len + rng.random_range(cfg.min_gap_s..=cfg.max_gap_s));
        }
        videos.insert(video_id.clone(), VideoMeta::new(video_id, t, cfg.fps)?);
    }
    Annotations::new(labels, videos, actions)
}

/// The model-free query triple of every class.
pub fn synthetic_queries(labels: &LabelSpace) -> Vec<QueryTriple> {
    labels.classes().iter().map(synthetic_triple).collect()
}

/// Oracle scorer plus one-hot embedder that knows the class prompts and
/// descriptions of `triples`.
pub fn synthetic_backends(
    ann: &Annotations,
    triples: &[QueryTriple],
    oracle: &SyntheticOracleConfig,
    filter: &FilterConfig,
) -> Result<(SyntheticOracle, SyntheticEmbedder)> {
    let scorer = SyntheticOracle::new(ann.clone(), oracle.clone(), triples)?;
    let mut emb = SyntheticEmbedder::new(ann.clone(), oracle.noise_std, oracle.seed);
    for class in ann.labels.classes() {
        emb.register_text(filter.class_prompt(&class.name), class.class_id);
    }
    for t in triples {
        emb.register_text(t.q_desc.clone(), t.class_id);
    }
    Ok((scorer, emb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub annotations: Annotations,
    pub queries: Vec<QueryTriple>,
    /// Oracle score series per video, for the classes annotated in it.
    pub scores: BTreeMap<String, Vec<ScoreSeries>>,
}

/// Generates a layout and scores every video against its own labels.
pub fn generate(cfg: &SynthConfig, exec: Exec) -> Result<SynthDataset> {
    let annotations = generate_annotations(cfg)?;
    let queries = synthetic_queries(&annotations.labels);
    let (scorer, emb) = synthetic_backends(&annotations, &queries, &cfg.oracle, &FilterConfig::default())?;
    let selection = annotations
        .videos
        .keys()
        .map(|v| {
            let classes = video_label_selection(v, &annotations.actions).into_iter().map(|(c, _)| c).collect();
            (v.clone(), classes)
        })
        .collect();
    let scores = score_videos(
        &annotations,
        &selection,
        &queries,
        &scorer,
        &emb,
        &ScoringConfig::default(),
        exec,
    )?;
    Ok(SynthDataset {
        annotations,
        queries,
        scores,
    })
}
