use std::hint::black_box;

use actionness::fcn::{build_network, fine_tune_with, NetworkSpec};
use actionness::pipeline::{actionness_pairs, estimate_video, propose_video, PipelineConfig};
use actionness::synth::{gen_video_set, SceneConfig};
use actionness::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn train_step(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let videos = gen_video_set(1, 4, &SceneConfig::default()).unwrap();
    let (pairs, _) = actionness_pairs(&videos, 2, cfg.data.flow_bound).unwrap();
    let spec = NetworkSpec::toy_local();
    let net = build_network(&spec, 1).unwrap();
    let mut sched = cfg.train.actionness.clone();
    sched.total_iterations = 2;
    let mut g = c.benchmark_group("train_2_iterations_batch16");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fine_tune_with(net.clone(), black_box(&pairs), &sched, 3, exec).unwrap())
        });
    }
    g.finish();
}

fn estimate_and_propose(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let video = &gen_video_set(2, 1, &SceneConfig::default()).unwrap()[0];
    let specs = cfg.specs().unwrap();
    let a = build_network(&specs.appearance, 1).unwrap();
    let m = build_network(&specs.motion, 2).unwrap();
    let scales = actionness::fcn::DEFAULT_SCALES;
    let mut g = c.benchmark_group("estimate_clip_4_scales");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_video(&a, &m, black_box(video), &scales, cfg.data.flow_bound, exec).unwrap())
        });
    }
    g.finish();

    let maps = estimate_video(&a, &m, video, &[1.0], cfg.data.flow_bound, Exec::Parallel).unwrap();
    let mut g = c.benchmark_group("propose_clip");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| propose_video(black_box(&maps), &cfg.proposals, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, train_step, estimate_and_propose);
criterion_main!(benches);
