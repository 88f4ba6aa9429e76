use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use omnigait::evalproto::{mean_ap, rank1};
use omnigait::losses::{cross_modal_triplet_grad, triplet_loss_grad};
use omnigait::model::Fusion;
use omnigait::nn::Conv2d;
use omnigait_bench::{distances, feature_map, features, rng};
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    g.sample_size(20);
    for (ch, hw) in [(16, 32), (32, 16), (64, 16)] {
        let mut r = rng(1);
        let layer = Conv2d::<f32>::new(&mut r, ch, ch, 3, 1, false);
        let x = feature_map(&mut r, 16, ch, hw);
        g.bench_with_input(BenchmarkId::new("forward", format!("{ch}x{hw}")), &x, |b, x| {
            b.iter(|| layer.forward(black_box(x.view())))
        });
        let dy = layer.forward(x.view());
        let mut layer = layer.clone();
        g.bench_with_input(BenchmarkId::new("backward", format!("{ch}x{hw}")), &x, |b, x| {
            b.iter(|| layer.backward(black_box(x.view()), dy.view()))
        });
    }
    g.finish();
}

fn fusion(c: &mut Criterion) {
    let mut r = rng(2);
    let f = Fusion::<f32>::new(&mut r, 16, 8);
    let a = feature_map(&mut r, 32, 16, 32);
    let b = feature_map(&mut r, 32, 16, 32);
    c.bench_function("fusion forward 4x8 frames", |bench| {
        bench.iter(|| f.forward(black_box(a.view()), b.view(), 8))
    });
}

fn losses(c: &mut Criterion) {
    let mut r = rng(3);
    let (a, labels) = features(&mut r, 16, 64, 8, 8);
    let (b, _) = features(&mut r, 16, 64, 8, 8);
    c.bench_function("triplet batch-all B16", |bench| {
        bench.iter(|| triplet_loss_grad(black_box(a.view()), &labels, 0.2).unwrap())
    });
    c.bench_function("cross-modal triplet B16", |bench| {
        bench.iter(|| cross_modal_triplet_grad(black_box(a.view()), b.view(), &labels, 0.2).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("retrieval");
    for (np, ng) in [(40, 40), (300, 100)] {
        let mut r = rng(4);
        let d = distances(&mut r, np, ng);
        let pl: Vec<usize> = (0..np).map(|i| i % 10).collect();
        let gl: Vec<usize> = (0..ng).map(|i| i % 10).collect();
        g.bench_function(BenchmarkId::new("rank1", format!("{np}x{ng}")), |b| {
            b.iter(|| rank1(black_box(d.view()), &pl, &gl).unwrap())
        });
        g.bench_function(BenchmarkId::new("mean_ap", format!("{np}x{ng}")), |b| {
            b.iter(|| mean_ap(black_box(d.view()), &pl, &gl).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, fusion, losses, metrics);
criterion_main!(benches);
