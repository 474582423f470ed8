//! Rayon against the sequential fallback on the per-sample kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsmap::autodiff::Tape;
use dsmap::model::{DomainId, ImageBatch, Model, ModelConfig};
use dsmap::par;
use dsmap::training::{train_step, ModelState, TrainConfig};
use dsmap::Tensor;

fn images(n: usize, size: usize, salt: u32) -> ImageBatch {
    let len = n * 3 * size * size;
    let data = (0..len).map(|i| (((i as u32).wrapping_mul(2654435761) ^ salt) % 2001) as f32 / 1000.0 - 1.0).collect();
    ImageBatch::new(Tensor::new(vec![n, 3, size, size], data).unwrap()).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3_fwd_bwd");
    let x = Tensor::new(vec![8, 32, 16, 16], (0..8 * 32 * 256).map(|i| (i % 7) as f32 * 0.1).collect()).unwrap();
    let w = Tensor::new(vec![32, 32, 3, 3], (0..32 * 32 * 9).map(|i| (i % 5) as f32 * 0.01).collect()).unwrap();
    let b = Tensor::new(vec![32], vec![0.0; 32]).unwrap();
    let zeros = Tensor::new(vec![8, 32, 16, 16], vec![0.0; 8 * 32 * 256]).unwrap();
    for (name, seq) in modes() {
        par::set_force_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let tape = Tape::new();
                let y = tape.variable(x.clone()).conv2d(tape.variable(w.clone()), tape.variable(b.clone()), 1, 1);
                let loss = y.relu().l1_mean(tape.constant(zeros.clone()));
                black_box(tape.backward(&[(loss, 1.0)]))
            })
        });
    }
    par::set_force_sequential(false);
    g.finish();
}

fn translate(c: &mut Criterion) {
    let mut g = c.benchmark_group("translate_toy32_batch8");
    let model = Model::new(ModelConfig::toy(32, 0)).unwrap();
    let (x, s) = (images(8, 32, 1), images(8, 32, 2));
    for (name, seq) in modes() {
        par::set_force_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(model.translate(&x, &s, DomainId::A, DomainId::B).unwrap()))
        });
    }
    par::set_force_sequential(false);
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_step_toy32_batch4");
    g.sample_size(10);
    let cfg = TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (x_a, x_b) = (images(4, 32, 3), images(4, 32, 4));
    for (name, seq) in modes() {
        par::set_force_sequential(seq);
        let mut st = ModelState::new(ModelConfig::toy(32, 0), cfg.adam()).unwrap();
        let mut k = 0;
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                k += 1;
                black_box(train_step(&mut st, &x_a, &x_b, &cfg, k).unwrap())
            })
        });
    }
    par::set_force_sequential(false);
    g.finish();
}

criterion_group!(benches, conv, translate, step);
criterion_main!(benches);
