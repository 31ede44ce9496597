//! One function per subcommand. Each builds the stage key from the
//! configuration and upstream keys, then either reuses the cached stage
//! directory or produces it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use zeal_core::backends::http::{HttpEmbedder, HttpScorer};
use zeal_core::backends::replay::{RecordingEmbedder, RecordingScorer, ReplayEmbedder, ReplayScorer};
use zeal_core::backends::{EmbeddingBackend, ScoringBackend};
use zeal_core::domain::{
    load_annotations, read_detections, read_score_file, write_annotations, write_detections, write_score_file,
    Annotations, LabelSpace, QueryTriple, ScoreSeries,
};
use zeal_core::evaluation::{evaluate, evaluate_splits, make_splits, render_table, EvalReport, SplitReport};
use zeal_core::filtering::{filter_metrics, video_label_selection, ClassFilter, Ranking};
use zeal_core::localization::localize_traced;
use zeal_core::pipeline::{localize_all, parse_grid, score_videos, sweep, sweep_csv, Selection, SweepParam};
use zeal_core::querygen::{generate_queries, read_queries, write_queries, HttpChat};
use zeal_core::synth::{generate, synthetic_backends, synthetic_queries};
use zeal_core::Exec;

use crate::config::{BackendKind, Config, QuerySource};
use crate::store::{file_digest, Begin, StageWriter, Store};

const FILTER_REPLAY: &str = "replay_embeddings.json";
const SCORE_REPLAY: &str = "replay_scores.json";
const TIMELINES: &str = "timelines";

pub struct Ctx {
    pub cfg: Config,
    pub store: Store,
    pub exec: Exec,
    pub force: bool,
}

impl Ctx {
    pub fn new(cfg: Config, jobs: Option<usize>, force: bool) -> Self {
        Self {
            store: Store::new(cfg.run.root.clone()),
            cfg,
            exec: Exec::with_jobs(jobs),
            force,
        }
    }

    fn annotations(&self) -> Result<Annotations> {
        let path = &self.cfg.run.annotations;
        let ann = load_annotations(path)?;
        Ok(match self.cfg.run.fps {
            Some(fps) => ann.with_fps(fps)?,
            None => ann,
        })
    }

    fn annotations_key(&self) -> Result<Value> {
        let path = &self.cfg.run.annotations;
        if !path.exists() {
            bail!("annotation file {} not found (set run.annotations)", path.display());
        }
        Ok(json!({ "sha256": file_digest(path)?, "fps": self.cfg.run.fps }))
    }

    fn replay_digest(&self, path: Option<&PathBuf>, what: &str) -> Result<Value> {
        let path = path.with_context(|| format!("backend.kind = \"replay\" needs backend.{what}"))?;
        Ok(json!({ "replay": file_digest(path)? }))
    }

    /// Identity of the embedding backend used for `role` ("filter" or
    /// "actionness").
    fn embedder_key(&self, role: &str) -> Result<Value> {
        let b = &self.cfg.backend;
        Ok(match b.kind {
            BackendKind::Http => {
                let e = match role {
                    "actionness" => self.cfg.actionness_embedder.as_ref().unwrap_or(&self.cfg.embedder),
                    _ => &self.cfg.embedder,
                };
                serde_json::to_value(e)?
            }
            BackendKind::Replay => match role {
                "actionness" => self.replay_digest(
                    b.replay_actionness_embeddings.as_ref().or(b.replay_embeddings.as_ref()),
                    "replay_embeddings",
                )?,
                _ => self.replay_digest(b.replay_embeddings.as_ref(), "replay_embeddings")?,
            },
            BackendKind::Synthetic => json!({ "oracle": self.cfg.synth.oracle }),
        })
    }

    fn scorer_key(&self) -> Result<Value> {
        Ok(match self.cfg.backend.kind {
            BackendKind::Http => serde_json::to_value(&self.cfg.scorer)?,
            BackendKind::Replay => self.replay_digest(self.cfg.backend.replay_scores.as_ref(), "replay_scores")?,
            BackendKind::Synthetic => json!({ "oracle": self.cfg.synth.oracle }),
        })
    }

    fn gen_queries_key(&self) -> Result<Value> {
        let querygen = match self.cfg.backend.queries {
            QuerySource::Llm => serde_json::to_value(&self.cfg.querygen)?,
            QuerySource::Synthetic => Value::Null,
        };
        Ok(json!({
            "annotations": self.annotations_key()?,
            "source": self.cfg.backend.queries,
            "querygen": querygen,
        }))
    }

    fn filter_key(&self) -> Result<Value> {
        let embedder = if self.cfg.filter.use_video_labels {
            Value::Null
        } else {
            self.embedder_key("filter")?
        };
        Ok(json!({
            "annotations": self.annotations_key()?,
            "filter": self.cfg.filter,
            "embedder": embedder,
        }))
    }

    fn score_key(&self) -> Result<Value> {
        Ok(json!({
            "gen-queries": self.gen_queries_key()?,
            "filter": self.filter_key()?,
            "scoring": self.cfg.scoring,
            "scorer": self.scorer_key()?,
            "actionness": self.embedder_key("actionness")?,
        }))
    }

    fn localize_key(&self) -> Result<Value> {
        Ok(json!({
            "score": self.score_key()?,
            "localization": self.cfg.localization,
        }))
    }

    fn evaluate_key(&self) -> Result<Value> {
        Ok(json!({
            "localize": self.localize_key()?,
            "evaluation": self.cfg.evaluation,
        }))
    }

    fn begin(&self, stage: &str, key: Value, target: Option<PathBuf>, require: Option<&str>) -> Result<Option<StageWriter>> {
        match self.store.begin(stage, key, self.force, target, require)? {
            Begin::Cached(dir) => {
                info!("{stage}: cache hit at {}", dir.display());
                println!("{}", dir.display());
                Ok(None)
            }
            Begin::Build(w) => {
                info!("{stage}: running");
                Ok(Some(w))
            }
        }
    }
}

fn upstream(ctx: &Ctx, stage: &str) -> Result<PathBuf> {
    let key = match stage {
        "gen-queries" => ctx.gen_queries_key()?,
        "filter" => ctx.filter_key()?,
        "score" => ctx.score_key()?,
        "localize" => ctx.localize_key()?,
        other => unreachable!("{other} is never read downstream"),
    };
    ctx.store.open(stage, &key)
}

fn done(w: StageWriter) -> Result<PathBuf> {
    let dir = w.finish()?;
    println!("{}", dir.display());
    Ok(dir)
}

fn safe_name(video_id: &str) -> Result<&str> {
    if video_id.is_empty() || video_id.contains(['/', '\\']) || video_id.starts_with('.') {
        bail!("video id {video_id:?} cannot be used as a file name");
    }
    Ok(video_id)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn gen_queries(ctx: &Ctx) -> Result<()> {
    let Some(w) = ctx.begin("gen-queries", ctx.gen_queries_key()?, None, None)? else {
        return Ok(());
    };
    let ann = ctx.annotations()?;
    let triples = match ctx.cfg.backend.queries {
        QuerySource::Synthetic => synthetic_queries(&ann.labels),
        QuerySource::Llm => {
            let chat = HttpChat::new(ctx.cfg.querygen.endpoint.clone());
            generate_queries(ann.labels.classes(), &ctx.cfg.querygen, &chat)?
        }
    };
    write_queries(w.dir().join("queries.json"), &triples, &ann.labels)?;
    done(w)?;
    Ok(())
}

fn embedder(ctx: &Ctx, ann: &Annotations, role: &str) -> Result<Box<dyn EmbeddingBackend>> {
    let b = &ctx.cfg.backend;
    Ok(match b.kind {
        BackendKind::Http => {
            let cfg = match role {
                "actionness" => ctx.cfg.actionness_embedder.clone().unwrap_or_else(|| ctx.cfg.embedder.clone()),
                _ => ctx.cfg.embedder.clone(),
            };
            Box::new(HttpEmbedder::new(cfg))
        }
        BackendKind::Replay => {
            let path = match role {
                "actionness" => b.replay_actionness_embeddings.as_ref().or(b.replay_embeddings.as_ref()),
                _ => b.replay_embeddings.as_ref(),
            };
            Box::new(ReplayEmbedder::load(path.context("backend.replay_embeddings is not set")?)?)
        }
        BackendKind::Synthetic => {
            let triples = synthetic_queries(&ann.labels);
            Box::new(synthetic_backends(ann, &triples, &ctx.cfg.synth.oracle, &ctx.cfg.filter)?.1)
        }
    })
}

#[derive(Serialize, Deserialize)]
struct RankEntry {
    class: String,
    class_id: usize,
    similarity: f64,
}

pub fn filter(ctx: &Ctx, record: bool) -> Result<()> {
    let fcfg = &ctx.cfg.filter;
    let require = (record && !fcfg.use_video_labels).then_some(FILTER_REPLAY);
    let Some(w) = ctx.begin("filter", ctx.filter_key()?, None, require)? else {
        return Ok(());
    };
    let ann = ctx.annotations()?;
    let rankings: BTreeMap<String, Ranking> = if fcfg.use_video_labels {
        ann.videos
            .keys()
            .map(|v| (v.clone(), video_label_selection(v, &ann.actions)))
            .collect()
    } else {
        let emb = RecordingEmbedder::new(embedder(ctx, &ann, "filter")?);
        let filter = ClassFilter::new(ann.labels.classes(), fcfg.clone(), &emb)?;
        let videos: Vec<_> = ann.videos.values().collect();
        let ranked = ctx.exec.try_map(&videos, |meta| filter.rank_all(meta, fcfg.num_frames))?;
        if record {
            emb.save(w.dir().join(FILTER_REPLAY))?;
        }
        ann.videos.keys().cloned().zip(ranked).collect()
    };

    let named = |r: &Ranking| -> Result<Vec<RankEntry>> {
        r.iter()
            .map(|&(class_id, similarity)| {
                Ok(RankEntry {
                    class: ann.labels.name_of(class_id)?.to_owned(),
                    class_id,
                    similarity,
                })
            })
            .collect()
    };
    let full: BTreeMap<&String, Vec<RankEntry>> = rankings
        .iter()
        .map(|(v, r)| Ok((v, named(r)?)))
        .collect::<Result<_>>()?;
    write_json(&w.dir().join("rankings.json"), &full)?;

    let keep = if fcfg.use_video_labels { usize::MAX } else { fcfg.top_k };
    let selection: BTreeMap<&String, Vec<String>> = full
        .iter()
        .map(|(v, r)| (*v, r.iter().take(keep).map(|e| e.class.clone()).collect()))
        .collect();
    write_json(&w.dir().join("selection.json"), &selection)?;

    let mut csv = String::from("k,num_frames,precision,recall\n");
    for k in 1..=ann.labels.len() {
        let m = filter_metrics(&rankings, &ann.actions, k)?;
        writeln!(csv, "{k},{},{},{}", fcfg.num_frames, m.precision, m.recall)?;
    }
    write_text(&w.dir().join("metrics.csv"), &csv)?;
    done(w)?;
    Ok(())
}

fn read_selection(dir: &Path, labels: &LabelSpace) -> Result<Selection> {
    let raw: BTreeMap<String, Vec<String>> = read_json(&dir.join("selection.json"))?;
    raw.into_iter()
        .map(|(v, names)| {
            let ids = names.iter().map(|n| labels.id_of(n)).collect::<zeal_core::Result<_>>()?;
            Ok((v, ids))
        })
        .collect()
}

fn scorer(ctx: &Ctx, ann: &Annotations, triples: &[QueryTriple]) -> Result<Box<dyn ScoringBackend>> {
    Ok(match ctx.cfg.backend.kind {
        BackendKind::Http => Box::new(HttpScorer::new(ctx.cfg.scorer.clone())),
        BackendKind::Replay => Box::new(ReplayScorer::load(
            ctx.cfg.backend.replay_scores.as_ref().context("backend.replay_scores is not set")?,
        )?),
        BackendKind::Synthetic => Box::new(synthetic_backends(ann, triples, &ctx.cfg.synth.oracle, &ctx.cfg.filter)?.0),
    })
}

pub fn score(ctx: &Ctx, record: bool) -> Result<()> {
    let queries_dir = upstream(ctx, "gen-queries")?;
    let filter_dir = upstream(ctx, "filter")?;
    let Some(w) = ctx.begin("score", ctx.score_key()?, None, record.then_some(SCORE_REPLAY))? else {
        return Ok(());
    };
    let ann = ctx.annotations()?;
    let triples = read_queries(queries_dir.join("queries.json"), &ann.labels)?;
    let selection = read_selection(&filter_dir, &ann.labels)?;

    let scorer = RecordingScorer::new(scorer(ctx, &ann, &triples)?);
    let emb = RecordingEmbedder::new(embedder(ctx, &ann, "actionness")?);
    let scores = score_videos(&ann, &selection, &triples, &scorer, &emb, &ctx.cfg.scoring, ctx.exec)?;
    for (video, series) in &scores {
        let path = w.dir().join("scores").join(format!("{}.json", safe_name(video)?));
        write_score_file(path, video, series, &ann.labels)?;
    }
    if record {
        scorer.save(w.dir().join(SCORE_REPLAY))?;
        emb.save(w.dir().join("replay_actionness_embeddings.json"))?;
    }
    done(w)?;
    Ok(())
}

fn read_scores(dir: &Path, ann: &Annotations) -> Result<BTreeMap<String, Vec<ScoreSeries>>> {
    ann.videos
        .keys()
        .map(|v| {
            let path = dir.join("scores").join(format!("{}.json", safe_name(v)?));
            if !path.exists() {
                bail!("{} is missing the score file of video {v}", dir.display());
            }
            Ok((v.clone(), read_score_file(&path, &ann.labels)?))
        })
        .collect()
}

fn timeline_csv(series: &ScoreSeries, ann: &Annotations, cfg: &zeal_core::localization::LocalizationConfig) -> Result<(String, String)> {
    let meta = &ann.videos[&series.video_id];
    let trace = localize_traced(series, meta, cfg)?;
    let starts: BTreeSet<usize> = trace.start_candidates.iter().copied().collect();
    let ends: BTreeSet<usize> = trace.end_candidates.iter().copied().collect();
    let mut csv = String::from(
        "frame,t,start_score,end_score,actionness,start_norm,end_norm,start_candidate,end_candidate,chosen\n",
    );
    for i in 0..series.len() {
        let t = meta.frame_to_seconds(i)?;
        let chosen = trace.detections.iter().any(|d| d.start <= t && t <= d.end);
        writeln!(
            csv,
            "{i},{t},{},{},{},{},{},{},{},{}",
            series.start_scores[i],
            series.end_scores[i],
            series.actionness[i],
            trace.start_norm[i],
            trace.end_norm[i],
            u8::from(starts.contains(&i)),
            u8::from(ends.contains(&i)),
            u8::from(chosen)
        )?;
    }
    let mut intervals = String::from("start_s,end_s,score\n");
    for d in &trace.detections {
        writeln!(intervals, "{},{},{}", d.start, d.end, d.score)?;
    }
    Ok((csv, intervals))
}

pub fn localize(ctx: &Ctx, emit_timeline: bool) -> Result<()> {
    let score_dir = upstream(ctx, "score")?;
    let Some(w) = ctx.begin("localize", ctx.localize_key()?, None, emit_timeline.then_some(TIMELINES))? else {
        return Ok(());
    };
    let ann = ctx.annotations()?;
    let scores = read_scores(&score_dir, &ann)?;
    let cfg = &ctx.cfg.localization;
    let dets = localize_all(&ann.videos, &scores, cfg, ctx.exec)?;
    write_detections(w.dir().join("detections.jsonl"), &dets)?;
    if emit_timeline {
        let all: Vec<&ScoreSeries> = scores.values().flatten().collect();
        let csvs = ctx.exec.try_map(&all, |s| timeline_csv(s, &ann, cfg))?;
        for (s, (csv, intervals)) in all.iter().zip(csvs) {
            let base = w.dir().join(TIMELINES).join(safe_name(&s.video_id)?);
            let class = ann.labels.name_of(s.class_id)?;
            write_text(&base.join(format!("{class}.csv")), &csv)?;
            write_text(&base.join(format!("{class}.intervals.csv")), &intervals)?;
        }
    }
    done(w)?;
    Ok(())
}

#[derive(Serialize)]
struct SplitSection {
    seen_fraction: f64,
    report: SplitReport,
}

#[derive(Serialize)]
struct Report {
    all_classes: EvalReport,
    zero_shot: Vec<SplitSection>,
}

pub fn evaluate_stage(ctx: &Ctx) -> Result<()> {
    let loc_dir = upstream(ctx, "localize")?;
    let Some(w) = ctx.begin("evaluate", ctx.evaluate_key()?, None, None)? else {
        return Ok(());
    };
    let ann = ctx.annotations()?;
    let dets = read_detections(loc_dir.join("detections.jsonl"))?;
    let ecfg = &ctx.cfg.evaluation;
    let thr = &ecfg.thresholds;
    if thr.is_empty() {
        bail!("evaluation.thresholds is empty");
    }
    let all_ids: BTreeSet<usize> = (0..ann.labels.len()).collect();
    let all_classes = evaluate(&dets, &ann.actions, thr, Some(&all_ids), ctx.exec);
    let mut rows = vec![("all classes".to_owned(), all_classes.map_at.clone(), all_classes.avg_map)];
    let mut zero_shot = Vec::new();
    for &f in &ecfg.seen_fractions {
        let splits = make_splits(ann.labels.len(), f, ecfg.num_splits, ecfg.split_seed)?;
        let report = evaluate_splits(&dets, &ann.actions, thr, &splits, ctx.exec);
        let seen = (f * 100.0).round() as u32;
        rows.push((
            format!("unseen {seen}|{} ({} splits)", 100 - seen, ecfg.num_splits),
            report.mean_map_at.clone(),
            report.mean_avg_map,
        ));
        zero_shot.push(SplitSection { seen_fraction: f, report });
    }
    let table = render_table(thr, &rows);
    write_json(&w.dir().join("report.json"), &Report { all_classes, zero_shot })?;
    write_text(&w.dir().join("report.txt"), &table)?;
    print!("{table}");
    done(w)?;
    Ok(())
}

pub fn sweep_stage(ctx: &Ctx, param: &str, grid: &str) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let values = parse_grid(grid)?;
    let score_dir = upstream(ctx, "score")?;
    let key = json!({
        "score": ctx.score_key()?,
        "localization": ctx.cfg.localization,
        "thresholds": ctx.cfg.evaluation.thresholds,
        "param": param.name(),
        "grid": values,
    });
    let Some(w) = ctx.begin("sweep", key, None, None)? else {
        return Ok(());
    };
    let ann = ctx.annotations()?;
    let scores = read_scores(&score_dir, &ann)?;
    let thr = &ctx.cfg.evaluation.thresholds;
    let all_ids: BTreeSet<usize> = (0..ann.labels.len()).collect();
    let rows = sweep(&ann, &scores, &ctx.cfg.localization, param, &values, thr, Some(&all_ids), ctx.exec)?;
    write_text(&w.dir().join("sweep.csv"), &sweep_csv(param, thr, &rows))?;
    done(w)?;
    Ok(())
}

pub fn synth(ctx: &Ctx, out: Option<PathBuf>) -> Result<()> {
    let key = json!({ "synth": ctx.cfg.synth });
    let Some(w) = ctx.begin("synth", key, out, None)? else {
        return Ok(());
    };
    let ds = generate(&ctx.cfg.synth, ctx.exec)?;
    write_annotations(w.dir().join("annotations.json"), &ds.annotations)?;
    write_queries(w.dir().join("queries.json"), &ds.queries, &ds.annotations.labels)?;
    for (video, series) in &ds.scores {
        let path = w.dir().join("scores").join(format!("{}.json", safe_name(video)?));
        write_score_file(path, video, series, &ds.annotations.labels)?;
    }
    done(w)?;
    Ok(())
}
