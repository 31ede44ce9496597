use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use zeal_core::backends::synthetic::SyntheticOracleConfig;
use zeal_core::evaluation::{evaluate, DEFAULT_THRESHOLDS};
use zeal_core::localization::LocalizationConfig;
use zeal_core::pipeline::localize_all;
use zeal_core::synth::{generate, SynthConfig};
use zeal_core::Exec;

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        m.push(("parallel", Exec::Parallel));
    }
    m
}

fn pipeline(c: &mut Criterion) {
    let cfg = SynthConfig {
        num_videos: 200,
        max_actions: 4,
        oracle: SyntheticOracleConfig {
            noise_std: 0.05,
            ..SyntheticOracleConfig::default()
        },
        ..SynthConfig::default()
    };
    let ds = generate(&cfg, Exec::Parallel).unwrap();
    let loc = LocalizationConfig::default();
    let dets = localize_all(&ds.annotations.videos, &ds.scores, &loc, Exec::Parallel).unwrap();

    let mut g = c.benchmark_group("localize_all");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| localize_all(&ds.annotations.videos, black_box(&ds.scores), &loc, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(black_box(&dets), &ds.annotations.actions, &DEFAULT_THRESHOLDS, None, exec))
        });
    }
    g.finish();

    let small = SynthConfig { num_videos: 40, ..cfg };
    let mut g = c.benchmark_group("synth_generate");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate(black_box(&small), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
