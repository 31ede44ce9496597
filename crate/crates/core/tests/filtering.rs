mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{fixture, gt};
use proptest::prelude::*;
use zeal_core::backends::replay::ReplayEmbedder;
use zeal_core::backends::synthetic::SyntheticOracleConfig;
use zeal_core::domain::{ActionClass, Annotations, LabelSpace, VideoMeta};
use zeal_core::filtering::{filter_classes, filter_metrics, sample_frame_indices, ClassFilter, FilterConfig, Ranking};
use zeal_core::synth::{class_names, generate_annotations, synthetic_backends, synthetic_queries, SynthConfig};

fn five_classes() -> LabelSpace {
    LabelSpace::new(&["CliffDiving", "Diving", "HighJump", "LongJump", "Shotput"]).unwrap()
}

#[test]
fn five_class_fixture_matches_hand_table() {
    let emb = ReplayEmbedder::load(fixture("filter_5class.json")).unwrap();
    let labels = five_classes();
    let meta = VideoMeta::new("filter_vid", 100.0, 1.0).unwrap();
    let cfg = FilterConfig {
        top_k: 5,
        ..FilterConfig::default()
    };
    let ranking = filter_classes(&meta, labels.classes(), &cfg, &emb).unwrap();

    // mean of the 8 frames is (1, 0.5, 0, 1), unit vector (2/3, 1/3, 0, 2/3)
    let hand = [
        (2, 2.0 * 2f64.sqrt() / 3.0),
        (0, 2.0 / 3.0),
        (1, 2.0 / 3.0),
        (3, 1.0 / 3.0),
        (4, 0.0),
    ];
    assert_eq!(ranking.len(), 5);
    for ((c, s), (hc, hs)) in ranking.iter().zip(hand) {
        assert_eq!(*c, hc);
        assert!((s - hs).abs() < 1e-12, "class {c}: {s} vs {hs}");
    }

    // brute force: every class against the raw mean, no normalization shortcut
    let frames = sample_frame_indices(&meta, 8);
    let vecs = zeal_core::backends::EmbeddingBackend::embed_frames(&emb, "filter_vid", &frames).unwrap();
    let mut mean = [0.0; 4];
    for v in &vecs {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x / 8.0;
        }
    }
    let prompts: Vec<String> = labels.classes().iter().map(|c| cfg.class_prompt(&c.name)).collect();
    let texts = zeal_core::backends::EmbeddingBackend::embed_text(&emb, &prompts).unwrap();
    for (c, s) in &ranking {
        let t = texts[*c].values();
        let dot: f64 = mean.iter().zip(t).map(|(a, b)| a * b).sum();
        let na = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb) - s).abs() < 1e-12);
    }

    let top3 = filter_classes(&meta, labels.classes(), &FilterConfig::default(), &emb).unwrap();
    assert_eq!(top3.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 0, 1]);
}

#[test]
fn permuting_classes_keeps_the_selection() {
    let emb = ReplayEmbedder::load(fixture("filter_5class.json")).unwrap();
    let labels = five_classes();
    let meta = VideoMeta::new("filter_vid", 100.0, 1.0).unwrap();
    let cfg = FilterConfig::default();
    let base = filter_classes(&meta, labels.classes(), &cfg, &emb).unwrap();
    let mut rev: Vec<ActionClass> = labels.classes().to_vec();
    rev.reverse();
    assert_eq!(filter_classes(&meta, &rev, &cfg, &emb).unwrap(), base);
    rev.swap(0, 3);
    assert_eq!(filter_classes(&meta, &rev, &cfg, &emb).unwrap(), base);
}

#[test]
fn one_hot_single_class_video_ranks_first() {
    // a video that is one action of class 2 from start to end
    let labels = LabelSpace::new(&class_names(6)).unwrap();
    let meta = VideoMeta::new("only2", 30.0, 1.0).unwrap();
    let ann = Annotations::new(
        labels,
        [(meta.video_id.clone(), meta.clone())].into(),
        vec![gt("only2", 2, 0.0, 30.0)],
    )
    .unwrap();
    let q = synthetic_queries(&ann.labels);
    let (_, emb) = synthetic_backends(&ann, &q, &SyntheticOracleConfig::default(), &FilterConfig::default()).unwrap();
    let r = filter_classes(&meta, ann.labels.classes(), &FilterConfig::default(), &emb).unwrap();
    assert_eq!(r.len(), 3);
    assert_eq!(r[0], (2, 1.0));
    assert_eq!(r[1], (0, 0.0));

    // top_k == K returns every class, sorted
    let all = FilterConfig {
        top_k: 6,
        ..FilterConfig::default()
    };
    let r = filter_classes(&meta, ann.labels.classes(), &all, &emb).unwrap();
    assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 0, 1, 3, 4, 5]);
}

#[test]
fn one_hot_filter_recalls_every_synthetic_video() {
    let cfg = SynthConfig {
        num_videos: 10,
        ..SynthConfig::default()
    };
    let ann = generate_annotations(&cfg).unwrap();
    let q = synthetic_queries(&ann.labels);
    let (_, emb) = synthetic_backends(&ann, &q, &SyntheticOracleConfig::default(), &FilterConfig::default()).unwrap();
    let filter = ClassFilter::new(ann.labels.classes(), FilterConfig::default(), &emb).unwrap();
    let rankings: BTreeMap<String, Ranking> = ann
        .videos
        .iter()
        .map(|(v, meta)| (v.clone(), filter.filter(meta).unwrap()))
        .collect();
    let m = filter_metrics(&rankings, &ann.actions, 3).unwrap();
    assert_eq!(m.recall, 1.0);
}

#[test]
fn four_video_metrics_fixture() {
    let rankings: BTreeMap<String, Ranking> = [
        ("v1", vec![0, 1, 2, 3]),
        ("v2", vec![3, 1, 4, 2]),
        ("v3", vec![0, 1, 2, 4]),
        ("v4", vec![3, 0, 1]),
    ]
    .into_iter()
    .map(|(v, r)| (v.to_owned(), r.into_iter().map(|c| (c, 0.0)).collect()))
    .collect();
    let truth = vec![
        gt("v1", 0, 0.0, 1.0),
        gt("v2", 1, 0.0, 1.0),
        gt("v2", 2, 2.0, 3.0),
        gt("v3", 4, 0.0, 1.0),
        gt("v4", 0, 0.0, 1.0),
        gt("v4", 3, 1.0, 2.0),
        gt("v4", 3, 5.0, 6.0),
    ];
    let m = filter_metrics(&rankings, &truth, 3).unwrap();
    // hits: v1 1/1, v2 1/2, v3 0/1, v4 2/2
    assert!((m.precision - (1.0 + 1.0 + 0.0 + 2.0) / 3.0 / 4.0).abs() < 1e-12);
    assert!((m.recall - (1.0 + 0.5 + 0.0 + 1.0) / 4.0).abs() < 1e-12);

    // exhaustive count
    let (mut p, mut r) = (0.0, 0.0);
    for (v, ranking) in &rankings {
        let rel: BTreeSet<usize> = truth.iter().filter(|g| &g.video_id == v).map(|g| g.class_id).collect();
        let mut hits = 0;
        for (i, (c, _)) in ranking.iter().enumerate() {
            if i < 3 && rel.contains(c) {
                hits += 1;
            }
        }
        p += hits as f64 / 3.0;
        r += hits as f64 / rel.len() as f64;
    }
    assert!((m.precision - p / 4.0).abs() < 1e-12);
    assert!((m.recall - r / 4.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn recall_never_drops_as_k_grows(
        perms in prop::collection::vec(Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(), 1..6),
        labels in prop::collection::vec(prop::collection::btree_set(0..6usize, 1..4), 6),
    ) {
        let rankings: BTreeMap<String, Ranking> = perms
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("v{i}"), p.iter().map(|&c| (c, 0.0)).collect()))
            .collect();
        let truth: Vec<_> = (0..perms.len())
            .flat_map(|i| labels[i].iter().map(move |&c| gt(&format!("v{i}"), c, 0.0, 1.0)))
            .collect();
        let mut last = 0.0;
        for k in 1..=6 {
            let m = filter_metrics(&rankings, &truth, k).unwrap();
            prop_assert!(m.recall >= last - 1e-12);
            last = m.recall;
        }
        prop_assert!((last - 1.0).abs() < 1e-12);
    }
}
