//! Serial vs rayon comparison of the data-parallel hot paths: kernel matrix
//! assembly, semigroup application, and exact path sampling.
//!
//! `cargo bench -p bessel-pde` runs both execution modes when the `parallel`
//! feature (default) is on; without it only the serial lane exists.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bessel_pde::montecarlo::sample_exact_with;
use bessel_pde::mspace::{make_grid, GridFunction, GridScheme};
use bessel_pde::semigroup::{KernelMatrix, KernelParams, Semigroup};
use bessel_pde::Exec;

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("serial", Exec::Serial)];
    #[cfg(feature = "parallel")]
    m.push(("parallel", Exec::Parallel));
    m
}

fn bench_kernel_matrix(c: &mut Criterion) {
    let grid = make_grid(0.5, 12.0, 257, GridScheme::Graded).unwrap();
    let params = KernelParams::new(0.5).unwrap();
    let mut group = c.benchmark_group("kernel_matrix_build_n257");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| KernelMatrix::build(params, 0.5, &grid, exec).unwrap());
        });
    }
    group.finish();
}

fn bench_apply(c: &mut Criterion) {
    let grid = make_grid(0.5, 12.0, 513, GridScheme::Graded).unwrap();
    let f = GridFunction::from_fn(&grid, |x| (-x * x).exp());
    let params = KernelParams::new(0.5).unwrap();
    let mut group = c.benchmark_group("semigroup_apply_n513");
    for (name, exec) in modes() {
        let sg = Semigroup::with_exec(Arc::clone(&grid), exec);
        sg.apply(params, 0.5, &f).unwrap(); // warm the cache
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, _| {
            b.iter(|| sg.apply(params, 0.5, &f).unwrap());
        });
    }
    group.finish();
}

fn bench_sample_exact(c: &mut Criterion) {
    let times: Vec<f64> = (0..=32).map(|k| k as f64 / 32.0).collect();
    let mut group = c.benchmark_group("sample_exact_16k_paths");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sample_exact_with(0.5, 1.0, &times, 1 << 14, 42, exec).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_kernel_matrix, bench_apply, bench_sample_exact);
criterion_main!(benches);
