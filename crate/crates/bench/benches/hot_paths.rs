use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use factorgnn::attention::AttentionParams;
use factorgnn::importance::task_loss;
use factorgnn::network::{NetworkConfig, StNetwork};
use factorgnn::pipeline::{generate, prepare, RunConfig};
use factorgnn::targets::segment_dp;
use factorgnn::{Tape, TaskId, TaskModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn segmentation(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let series: Vec<f64> = (0..60).map(|t| f64::from(t >= 30) + 0.1 * r.random_range(-1.0..1.0)).collect();
    c.bench_function("segment_dp len 60 k 3", |b| b.iter(|| segment_dp(black_box(&series), 3).unwrap()));
}

fn attention(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let params = AttentionParams::new(random(&[40, 32], &mut r), random(&[40, 32], &mut r)).unwrap();
    let window = random(&[8, 40], &mut r);
    c.bench_function("attention adjacency 8x40", |b| {
        b.iter(|| params.build_adjacency(black_box(&window)).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let mut cfg = RunConfig::default();
    for (k, v) in [("n_series", "8"), ("n_times", "600"), ("stride", "40")] {
        cfg.set(k, v).unwrap();
    }
    let (raw, _) = generate(&cfg).unwrap();
    let data = prepare(&raw, &cfg, None).unwrap();
    let net = StNetwork::new(NetworkConfig::new(8, 40, 2), 0).unwrap();
    let sample = &data.train()[..1];
    c.bench_function("network forward 8x40", |b| {
        b.iter(|| net.predict(TaskId::Pf, black_box(&sample[0].input)).unwrap())
    });
    c.bench_function("network pf loss forward+backward 8x40", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = net.params().bind(&tape, |_| true);
            let loss = task_loss(&net, &p, TaskId::Pf, black_box(sample)).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

criterion_group!(benches, segmentation, attention, network);
criterion_main!(benches);
