//! Sequential vs rayon execution of the data-parallel hot paths: per-sample
//! gradients of a training batch, sliding-window inference and dataset
//! generation. Without the `parallel` feature both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use microseg::model::{Dims, ModelConfig, SegModel, Stage};
use microseg::pipeline::{sample_gradients, sliding_window_infer, InferOptions, SomaTiles, TrainConfig, TrainSet};
use microseg::synth::{generate_dataset, AugmentParams, SynthConfig};
use microseg::Exec;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn batch_gradients(c: &mut Criterion) {
    let data = generate_dataset(&SynthConfig::default(), 4, Exec::Sequential).unwrap();
    let set = SomaTiles::from_tiles(data, &[], AugmentParams::default());
    let items: Vec<_> = (0..set.len()).map(|i| set.item(i, 0, 0).unwrap()).collect();
    let model = SegModel::new(&ModelConfig::tiny(), Stage::Soma, 0).unwrap();
    let cfg = TrainConfig::default();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&items, |i, item| sample_gradients(&model, item, &cfg, i as u64).unwrap().0))
        });
    }
    group.finish();
}

fn tiled_inference(c: &mut Criterion) {
    let volume = generate_dataset(&SynthConfig { dims: Dims::new(128, 128, 16), ..SynthConfig::default() }, 1, Exec::Sequential).unwrap();
    let model = SegModel::new(&ModelConfig::tiny(), Stage::Soma, 0).unwrap();
    let mut group = c.benchmark_group("tiled_inference");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let opts = InferOptions { exec, ..InferOptions::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sliding_window_infer(&model, &volume[0].image, model.config().input_dims, opts).unwrap())
        });
    }
    group.finish();
}

fn dataset_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("dataset_generation");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| generate_dataset(&SynthConfig::default(), 8, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, tiled_inference, dataset_generation);
criterion_main!(benches);
