use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stheat_bench::Fixture;
use stheat_core::infsup::{assemble_form, discrete_constants};
use stheat_core::mild::mild_solve;
use stheat_core::spacetime::assemble_and_solve;
use stheat_core::{EigenBasis, TimeGrid};

fn noise(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_noise");
    for (j, n) in [(16, 256), (64, 1024)] {
        let fx = Fixture::new(j, n);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("J{j}_N{n}")),
            &fx,
            |b, fx| b.iter(|| black_box(fx.noise(7))),
        );
    }
    g.finish();
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_sweep");
    for (j, n) in [(16, 256), (64, 1024)] {
        let fx = Fixture::new(j, n);
        let w = fx.noise(0);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("J{j}_N{n}")),
            &fx,
            |b, fx| {
                b.iter(|| {
                    black_box(
                        assemble_and_solve(&fx.op, &fx.load, &w, &fx.grid, &fx.basis, 1, 0)
                            .unwrap(),
                    )
                })
            },
        );
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let fx = Fixture::new(16, 512);
    let w = fx.noise(0);
    c.bench_function("mild_oracle/J16_N512", |b| {
        b.iter(|| {
            black_box(mild_solve(&fx.op, &fx.load, &fx.q, &w, &fx.grid, &fx.basis, 1, 0).unwrap())
        })
    });
}

fn infsup(c: &mut Criterion) {
    let mut g = c.benchmark_group("infsup_constants");
    g.sample_size(10);
    for (j, n) in [(8, 32), (16, 64), (32, 128)] {
        let grid = TimeGrid::new(0.01, n).unwrap();
        let basis = EigenBasis::new(j).unwrap();
        g.bench_function(BenchmarkId::from_parameter(format!("J{j}_N{n}")), |b| {
            b.iter(|| {
                let form = assemble_form(1.0, &grid, &basis, 0.0).unwrap();
                black_box(discrete_constants(&form).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, noise, solver, oracle, infsup);
criterion_main!(benches);
