//! Pipeline stages on the default rayon pool versus a single-thread pool.
//!
//! Build with `--no-default-features` to measure the purely sequential code
//! path instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvfuse_core::appearance::compute_appearance_features;
use mvfuse_core::appearance::mock::RandomProjectionEncoder;
use mvfuse_core::dataset_io::synth::{generate_synthetic_dataset, SynthConfig};
use mvfuse_core::evaluator::{predict_split, EvalOptions, Predictor};
use mvfuse_core::motion::MotionModel;
use mvfuse_core::mv_transforms::eval_view;
use mvfuse_core::temporal_sampler::ViewProtocol;
use mvfuse_nn::efficientnet::EfficientNetConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![
        ("single", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("pool", rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()),
    ]
}

fn dataset() -> mvfuse_core::dataset_io::synth::SyntheticDataset {
    let cfg = SynthConfig {
        classes: 4,
        per_class: 2,
        test_per_class: 2,
        frames: 16,
        height: 32,
        width: 32,
        xor: false,
        seed: 1,
    };
    generate_synthetic_dataset(&cfg).unwrap()
}

fn transforms(c: &mut Criterion) {
    let ds = dataset();
    let frame = &ds.videos[0].clip.frames[0];
    c.bench_function("eval_view_32_to_224", |b| b.iter(|| black_box(eval_view(frame, 224).unwrap())));
}

fn appearance(c: &mut Criterion) {
    let ds = dataset();
    let encoder = RandomProjectionEncoder::new(0);
    let mut g = c.benchmark_group("appearance_features");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("random_projection", name), |b| {
            b.iter(|| pool.install(|| black_box(compute_appearance_features(&ds.test, &ds, &encoder).unwrap())))
        });
    }
    g.finish();
}

fn multiview(c: &mut Criterion) {
    let ds = dataset();
    let mut cfg = EfficientNetConfig::b0(2);
    cfg.stochastic_depth = 0.0;
    let model = MotionModel::with_config(cfg, 4, &mut ChaCha8Rng::seed_from_u64(0));
    let opts = EvalOptions { protocol: ViewProtocol::test_with(8), crop_size: 32, ..EvalOptions::default() };
    let mut g = c.benchmark_group("mv_only_split");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("8_views", name), |b| {
            b.iter(|| {
                pool.install(|| {
                    black_box(predict_split(Predictor::MvOnly(&model), None, &ds.test, &ds, &opts).unwrap())
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, transforms, appearance, multiview);
criterion_main!(benches);
