use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use vptag::synthbench::{generate_domains, quickstart_config};
use vptag::training::{decode_episode, episode_nll, ModelParams};
use vptag::{log_partition, marginals, viterbi, MetricKind};
use vptag_bench::{bench_episode, random_lattice};

fn crf_ops(c: &mut Criterion) {
    let lat = random_lattice(40, 24, 1);
    c.bench_function("log_partition_t40_k24", |b| {
        b.iter(|| log_partition(black_box(&lat)))
    });
    c.bench_function("viterbi_t40_k24", |b| b.iter(|| viterbi(black_box(&lat))));
    c.bench_function("marginals_t40_k24", |b| b.iter(|| marginals(black_box(&lat))));
}

fn episode_ops(c: &mut Criterion) {
    let (episode, provider) = bench_episode(7);
    let plain = ModelParams::new(MetricKind::Vp, None);
    c.bench_function("episode_nll_vp", |b| {
        b.iter(|| episode_nll(black_box(&plain), black_box(&episode), black_box(&provider)))
    });
    let with_head = ModelParams::new(MetricKind::Vp, Some(provider.dim()));
    c.bench_function("episode_nll_vp_with_head", |b| {
        b.iter(|| episode_nll(black_box(&with_head), black_box(&episode), black_box(&provider)))
    });
    c.bench_function("decode_episode_vp", |b| {
        b.iter(|| decode_episode(black_box(&plain), black_box(&episode), black_box(&provider)))
    });
}

fn generation(c: &mut Criterion) {
    let cfg = quickstart_config();
    c.bench_function("generate_quickstart_domains", |b| {
        b.iter(|| generate_domains(black_box(&cfg)))
    });
}

criterion_group!(benches, crf_ops, episode_ops, generation);
criterion_main!(benches);
