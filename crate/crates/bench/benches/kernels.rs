use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zdcgan_core::data::{compute_stats, synth_dataset, SynthProfile};
use zdcgan_core::evaluation::ws1;
use zdcgan_core::nets::{generator_forward, LatentCode};
use zdcgan_core::training::{initial_params, Trainer, TrainConfig};

fn config(base_channels: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.architecture.base_channels = base_channels;
    cfg
}

fn generator(c: &mut Criterion) {
    let ds = synth_dataset(1, 4, 2, &SynthProfile::default()).unwrap();
    let mut group = c.benchmark_group("generator_forward");
    for channels in [4, 8] {
        let params = initial_params(&ds, &config(channels)).unwrap();
        let cond = ds.group_condition(0);
        let z = LatentCode::sample(params.config.latent_dim, &mut ChaCha8Rng::seed_from_u64(0));
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| generator_forward(black_box(&params), cond, &z).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let ds = synth_dataset(2, 8, 4, &SynthProfile::default()).unwrap();
    let stats = compute_stats(&ds).unwrap();
    let batch: Vec<usize> = (0..16).collect();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for channels in [4, 8] {
        let cfg = config(channels);
        let mut trainer = Trainer::new(initial_params(&ds, &cfg).unwrap(), &cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| trainer.step(&ds, &stats, &batch, 0, 0).unwrap())
        });
    }
    group.finish();
}

fn wasserstein(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("ws1");
    for n in [1_000, 100_000] {
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| ws1(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, generator, train_step, wasserstein);
criterion_main!(benches);
