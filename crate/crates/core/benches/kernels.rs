//! Each kernel runs under the default rayon pool and under a one-thread pool.
//! Built without the `parallel` feature both variants are sequential.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use irfusion_core::loss::{fusion_loss, LossConfig};
use irfusion_core::metrics::{self, WindowConfig};
use irfusion_core::model::{build_network, NetConfig};
use irfusion_core::trainer::synth_pairs;
use irfusion_core::{Graph, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![
        ("parallel", rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()),
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ]
}

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

fn conv(c: &mut Criterion) {
    let x = random(Shape::new(1, 32, 64, 64), 1);
    let w = random(Shape::new(64, 32, 3, 3), 2);
    let mut group = c.benchmark_group("conv2d_32to64_64x64");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| {
                b.iter(|| {
                    let mut g = Graph::<f64>::new();
                    let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
                    black_box(g.conv2d(xv, wv, None, 1, 1).unwrap());
                })
            })
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let net = build_network(NetConfig::default(), 0).unwrap();
    let vis = random(Shape::new(1, 3, 256, 256), 3).cast::<f32>();
    let ir = random(Shape::new(1, 1, 256, 256), 4).cast::<f32>();
    let mut group = c.benchmark_group("forward_f32_256");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| black_box(net.forward_as(&vis, &ir).unwrap())))
        });
    }
    group.finish();
}

fn qw(c: &mut Criterion) {
    let pair = &synth_pairs(1, 256, 0).unwrap()[0];
    let y = metrics::luminance(&pair.vis).unwrap();
    let mut group = c.benchmark_group("qw_stride1_256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| black_box(metrics::qw(&y, &pair.ir, &y, &WindowConfig::default()).unwrap())))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let net = build_network(NetConfig::default(), 0).unwrap();
    let pair = &synth_pairs(1, 64, 0).unwrap()[0];
    let loss = LossConfig { window: WindowConfig::default().with_stride(4), ..LossConfig::default() };
    let mut group = c.benchmark_group("forward_backward_64");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| {
                b.iter(|| {
                    let mut g = Graph::<f64>::new();
                    let bound = net.bind(&mut g, true);
                    let v = g.input(pair.vis.clone());
                    let r = g.input(pair.ir.clone());
                    let out = bound.forward(&mut g, v, r).unwrap();
                    let f = g.affine(out, 0.5, 0.5);
                    let l = fusion_loss(&mut g, v, r, f, &loss).unwrap();
                    g.backward(l).unwrap();
                    black_box(g.len())
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, forward, qw, train_step);
criterion_main!(benches);
