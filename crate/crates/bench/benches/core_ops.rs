//! Criterion benchmarks for the hot paths: the dense forward/backward pass,
//! masked weight transfer, topology computation, and registry encoding.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use msgtl_core::engine::{backward, forward, Mode, StageNetwork, TrainConfig};
use msgtl_core::funnelgen::{generate, FunnelConfig};
use msgtl_core::pipeline::{registry_to_bytes, train_msgtl};
use msgtl_core::rng;
use msgtl_core::topology::{embedding_plan, width_schedule};
use msgtl_core::transfer::{init_network, transfer_weights};
use ndarray::{Array1, Array2};

fn wide_network() -> StageNetwork {
    let topo = width_schedule(344, 2, 6).unwrap();
    init_network(&topo, &mut rng::stream(1, 0)).unwrap()
}

fn batch(m: usize, n: usize) -> (Array2<f64>, Array1<f64>) {
    let x = Array2::from_shape_fn((m, n), |(i, j)| ((i * 31 + j * 7) as f64 * 0.013).sin());
    let y = Array1::from_shape_fn(m, |i| (i % 3 == 0) as u8 as f64);
    (x, y)
}

fn bench_topology(c: &mut Criterion) {
    c.bench_function("width_schedule_4096", |b| {
        b.iter(|| width_schedule(black_box(4096), 2, 8).unwrap())
    });
    let prev = width_schedule(300, 2, 6).unwrap();
    let next = width_schedule(500, 2, 6).unwrap();
    c.bench_function("embedding_plan_capped", |b| {
        b.iter(|| embedding_plan(black_box(&prev), black_box(&next)).unwrap())
    });
}

fn bench_forward_backward(c: &mut Criterion) {
    let net = wide_network();
    let (x, y) = batch(128, 344);
    c.bench_function("forward_128x344", |b| {
        let mut r = rng::stream(2, 0);
        b.iter(|| forward(black_box(&net), black_box(&x), 0.0, Mode::Infer, &mut r).unwrap())
    });
    c.bench_function("forward_backward_128x344", |b| {
        let mut r = rng::stream(2, 0);
        b.iter(|| {
            let pass = forward(&net, &x, 0.0, Mode::Train, &mut r).unwrap();
            backward(black_box(&net), &pass, &y, 0.7, false).unwrap()
        })
    });
}

fn bench_transfer(c: &mut Criterion) {
    let prev = init_network(&width_schedule(300, 2, 6).unwrap(), &mut rng::stream(3, 0)).unwrap();
    let next_topo = width_schedule(500, 2, 6).unwrap();
    c.bench_function("transfer_weights_300_to_500", |b| {
        b.iter(|| {
            let mut next = init_network(&next_topo, &mut rng::stream(3, 1)).unwrap();
            transfer_weights(
                black_box(&prev),
                &mut next,
                0.3,
                false,
                1,
                0,
                &mut rng::stream(3, 2),
            )
            .unwrap()
        })
    });
}

fn bench_registry_encode(c: &mut Criterion) {
    let data = generate(&FunnelConfig::compact(5)).unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let registry = train_msgtl(&data, &config, 0).unwrap();
    c.bench_function("registry_to_bytes_compact", |b| {
        b.iter(|| registry_to_bytes(black_box(&registry)))
    });
}

criterion_group!(
    benches,
    bench_topology,
    bench_forward_backward,
    bench_transfer,
    bench_registry_encode
);
criterion_main!(benches);
