use criterion::{criterion_group, criterion_main, Criterion};
use dart_bench::{benchmark_config, benchmark_data, tiny_config};
use dart_core::model::{extract_embeddings, train, Trainer};
use std::hint::black_box;

fn training_step(c: &mut Criterion) {
    let data = benchmark_data();
    let cfg = benchmark_config(1_000_000);
    let mut trainer = Trainer::new(&cfg, &data, None).unwrap();
    c.bench_function("default_model_train_step", |bench| bench.iter(|| black_box(trainer.step().unwrap())));
}

fn tiny_run(c: &mut Criterion) {
    let data = benchmark_data();
    let cfg = tiny_config(20);
    let mut group = c.benchmark_group("tiny_model");
    group.sample_size(10);
    group.bench_function("train_20_steps", |bench| bench.iter(|| black_box(train(&cfg, &data).unwrap())));
    let model = train(&cfg, &data).unwrap().model;
    group.bench_function("extract_embeddings", |bench| {
        bench.iter(|| black_box(extract_embeddings(&model, &data).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, training_step, tiny_run);
criterion_main!(benches);
