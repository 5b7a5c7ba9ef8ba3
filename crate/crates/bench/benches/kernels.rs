use std::hint::black_box;

use chaintube::geometry::{linear_map, minkowski_sum, pontryagin_diff, rpi_outer_approx, HPolytope, RPI_ITERATION_CAP};
use chaintube::numkernel::solve_qp;
use chaintube::runtime::{run, run_baseline, ControllerKind, RunOptions};
use chaintube::synthesis::synthesize;
use chaintube_bench::{demo_options, demo_system, horizon_qp, polygon};
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{dmatrix, DVector};

fn geometry(c: &mut Criterion) {
    let p = polygon(8, 1.0, 0.1);
    let q = polygon(6, 0.3, 0.4);
    let m = dmatrix![1.0, 0.1; -0.2, 0.9];
    c.bench_function("minkowski_sum 8+6", |b| b.iter(|| minkowski_sum(black_box(&p), black_box(&q)).unwrap()));
    c.bench_function("pontryagin_diff 8-6", |b| b.iter(|| pontryagin_diff(black_box(&p), black_box(&q)).unwrap()));
    c.bench_function("linear_map 8", |b| b.iter(|| linear_map(black_box(&m), black_box(&p)).unwrap()));
    let w = HPolytope::from_bounds(&[-0.1, -0.1], &[0.1, 0.1]).unwrap();
    let a_cl = dmatrix![0.9, 0.1; -0.1, 0.8];
    c.bench_function("rpi_outer_approx 2-D", |b| {
        b.iter(|| rpi_outer_approx(black_box(&a_cl), black_box(&w), 1e-4, RPI_ITERATION_CAP).unwrap())
    });
}

fn qp(c: &mut Criterion) {
    for n in [10, 40] {
        let p = horizon_qp(n);
        c.bench_function(&format!("solve_qp n={n}"), |b| b.iter(|| solve_qp(black_box(&p)).unwrap()));
    }
}

fn pipeline(c: &mut Criterion) {
    let sys = demo_system();
    let opts = demo_options(&sys);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("synthesize demo", |b| b.iter(|| synthesize(black_box(&sys), &opts).unwrap()));
    let design = synthesize(&sys, &opts).unwrap();
    let x0 = DVector::from_row_slice(&[0.09, -0.1, 0.025, 0.355, -0.045, -0.35, -0.09, 0.1]);
    let run_opts = RunOptions { steps: 5, ..RunOptions::default() };
    g.bench_function("chain 5 steps", |b| b.iter(|| run(&sys, &design, black_box(&x0), &run_opts).unwrap()));
    g.bench_function("cmpc 5 steps", |b| {
        b.iter(|| run_baseline(&sys, &design, black_box(&x0), &run_opts, ControllerKind::Cmpc).unwrap())
    });
    g.finish();
}

criterion_group!(benches, geometry, qp, pipeline);
criterion_main!(benches);
