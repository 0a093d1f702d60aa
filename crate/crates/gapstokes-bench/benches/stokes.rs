use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gapstokes::fd::{global_energy, solve_w, sup_grad, NeckGrid, SideBc};
use gapstokes_bench::{residual_forcing, sym_profile};

fn solve(c: &mut Criterion) {
    let p = sym_profile(1e-3);
    let f = residual_forcing(&p);
    let mut group = c.benchmark_group("stokes-solve");
    group.sample_size(10);
    for (n1, n2) in [(64, 32), (128, 32), (256, 64)] {
        let grid = Arc::new(NeckGrid::new(&p, 1.5 * p.r, n1, n2).unwrap());
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n1}x{n2}")), &grid, |b, g| {
            b.iter(|| solve_w(&p, &f, &SideBc::Zero, g).unwrap())
        });
    }
    group.finish();
}

fn diagnostics(c: &mut Criterion) {
    let p = sym_profile(1e-3);
    let f = residual_forcing(&p);
    let grid = Arc::new(NeckGrid::new(&p, 1.5 * p.r, 256, 64).unwrap());
    let sol = solve_w(&p, &f, &SideBc::Zero, &grid).unwrap();
    c.bench_function("global-energy", |b| b.iter(|| global_energy(&sol)));
    c.bench_function("sup-grad", |b| b.iter(|| sup_grad(&sol, (-p.r, p.r)).unwrap()));
}

criterion_group!(benches, solve, diagnostics);
criterion_main!(benches);
