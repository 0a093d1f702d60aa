use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gapstokes::verifier::{residual_orders, Window};
use gapstokes::{BoundaryMode, CorrectorHierarchy};
use gapstokes_bench::sym_profile;

fn build(c: &mut Criterion) {
    let p = sym_profile(1e-3);
    let mut group = c.benchmark_group("hierarchy-build");
    group.sample_size(10);
    for mode in BoundaryMode::ALL {
        for levels in [2, 4] {
            group.bench_with_input(BenchmarkId::new(mode.to_string(), levels), &levels, |b, &l| {
                b.iter(|| CorrectorHierarchy::build(&p, mode, l).unwrap())
            });
        }
    }
    group.finish();
}

fn residual_sweep(c: &mut Criterion) {
    let p = sym_profile(1e-4);
    let h = CorrectorHierarchy::build(&p, BoundaryMode::TranslateX1, 4).unwrap();
    let window = Window::standard(&p);
    let mut group = c.benchmark_group("residual-orders");
    group.sample_size(10);
    for m in [1, 3] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| residual_orders(&h, m, &window).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, build, residual_sweep);
criterion_main!(benches);
