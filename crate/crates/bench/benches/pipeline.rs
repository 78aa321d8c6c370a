//! Criterion benchmarks for the hot paths of the pipeline: DSP preprocessing,
//! the frozen encoder forward, pooling, and one training step of the head.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nmoe::backbone::{self, BackboneConfig, BackboneParams};
use nmoe::dataset::{generate_trial, SynthConfig};
use nmoe::fusion::{self, Model, Phase, PooledWindow};
use nmoe::signals::{self, EmotionClass};
use std::hint::black_box;

fn trial() -> nmoe::EcgRecord {
    let cfg = SynthConfig::default();
    generate_trial(EmotionClass::from_index(0).unwrap(), &cfg, 17).unwrap()
}

fn bench_synth(c: &mut Criterion) {
    let cfg = SynthConfig::default();
    c.bench_function("synth_one_trial_40s", |b| {
        b.iter(|| generate_trial(EmotionClass::from_index(2).unwrap(), &cfg, black_box(23)))
    });
}

fn bench_preprocess(c: &mut Criterion) {
    let record = trial();
    let coeffs = signals::design_highpass(0.5, record.fs).unwrap();
    c.bench_function("preprocess_one_trial_40s", |b| {
        b.iter(|| signals::preprocess_record(black_box(&record), &coeffs))
    });
}

fn bench_segment(c: &mut Criterion) {
    let coeffs = signals::design_highpass(0.5, 256.0).unwrap();
    let record = signals::preprocess_record(&trial(), &coeffs).unwrap();
    c.bench_function("segment_50pct_overlap", |b| {
        b.iter(|| signals::segment_overlap(black_box(&record), 2560, 1280))
    });
}

fn bench_backbone_forward(c: &mut Criterion) {
    let params = BackboneParams::init(&BackboneConfig::default()).unwrap();
    let coeffs = signals::design_highpass(0.5, 256.0).unwrap();
    let record = signals::preprocess_record(&trial(), &coeffs).unwrap();
    let window = &record.samples[..2560];
    let mut group = c.benchmark_group("backbone");
    group.sample_size(20);
    group.bench_function("forward_one_window", |b| {
        b.iter(|| backbone::forward_all(&params, black_box(window)))
    });
    let stack = backbone::forward_all(&params, window).unwrap();
    group.bench_function("pool_stack", |b| b.iter(|| black_box(&stack).pooled()));
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let params = BackboneParams::init(&BackboneConfig::default()).unwrap();
    let coeffs = signals::design_highpass(0.5, 256.0).unwrap();
    let record = signals::preprocess_record(&trial(), &coeffs).unwrap();
    let windows: Vec<PooledWindow> = (0..32)
        .map(|i| {
            let start = (i % 7) * 1280;
            let stack =
                backbone::forward_all(&params, &record.samples[start..start + 2560]).unwrap();
            PooledWindow::from_stack(&stack, EmotionClass::from_index(i % 5).unwrap())
        })
        .collect();
    let model = Model::init(13, 64, 128, 5, true, 3);
    c.bench_function("head_loss_and_grads_batch32", |b| {
        b.iter_batched(
            || model.clone(),
            |m| fusion::loss_and_grads(&m, black_box(&windows), Phase::Train, 7),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_synth,
    bench_preprocess,
    bench_segment,
    bench_backbone_forward,
    bench_train_step
);
criterion_main!(benches);
