//! Sequential versus rayon data-parallel paths: crop generation for a batch
//! and frozen feature extraction.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssvt_core::augment::{build_batch, build_batch_seq, CropConfig};
use ssvt_core::data_io::{render_synthetic, SynthSpec};
use ssvt_core::probe::extract_features;
use ssvt_core::vit::{init_params, ModelConfig};
use ssvt_core::Tensor;

fn images(n: usize, size: usize) -> Vec<Tensor> {
    let spec = SynthSpec {
        classes: 2,
        per_class: n,
        image_size: size,
        seed: 0,
    };
    (0..n).map(|i| render_synthetic(&spec, i % 2, i).unwrap()).collect()
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn crops(c: &mut Criterion) {
    let imgs = images(8, 64);
    let batch: Vec<(u64, &Tensor)> = imgs.iter().enumerate().map(|(i, t)| (i as u64, t)).collect();
    let cfg = CropConfig::default();
    let wide = pool(std::thread::available_parallelism().map_or(2, |n| n.get().max(2)));
    let mut group = c.benchmark_group("crop_batch");
    group.sample_size(20);
    group.bench_function("sequential", |b| b.iter(|| build_batch_seq(black_box(&batch), &cfg, 0).unwrap()));
    group.bench_function(BenchmarkId::new("rayon", wide.current_num_threads()), |b| {
        wide.install(|| b.iter(|| build_batch(black_box(&batch), &cfg, 0).unwrap()))
    });
    group.finish();
}

fn features(c: &mut Criterion) {
    let model = ModelConfig::micro();
    let params = init_params(&model, 0).unwrap();
    let imgs = images(32, model.image_size);
    let mut group = c.benchmark_group("extract_features");
    group.sample_size(10);
    for threads in [1, std::thread::available_parallelism().map_or(2, |n| n.get().max(2))] {
        let p = pool(threads);
        group.bench_function(BenchmarkId::new("threads", threads), |b| {
            p.install(|| b.iter(|| extract_features(black_box(&params), &imgs).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, crops, features);
criterion_main!(benches);
