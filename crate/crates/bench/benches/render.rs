use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semsplat_core::{render, render_backward, OutputGrads};

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("render");
    g.sample_size(10);
    for (count, size) in [(1_000, 128), (10_000, 256)] {
        let scene = semsplat_bench::scene(count, 0);
        let camera = semsplat_bench::camera(size);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{count}@{size}")), &(), |b, _| b.iter(|| render(&scene, &camera)));
    }
    g.finish();
}

fn backward(c: &mut Criterion) {
    let scene = semsplat_bench::scene(1_000, 0);
    let camera = semsplat_bench::camera(128);
    let n = camera.width() * camera.height();
    let grads = OutputGrads {
        color: Some(vec![1.0; 3 * n]),
        depth: Some(vec![1.0; n]),
        ..Default::default()
    };
    c.bench_function("render_backward/1000@128", |b| b.iter(|| render_backward(&scene, &camera, &grads)));
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
