use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsr_bench::moderate_change;
use gsr_core::analysis::build_matrix;
use gsr_core::{solve_arl_with, survival_series, Factorization, Method, SurvivalOptions};

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    let (model, _) = moderate_change(2);
    for n in [64, 256, 1024] {
        for method in [Method::CollocationHat, Method::Midpoint] {
            group.bench_with_input(BenchmarkId::new(method.name(), n), &n, |b, &n| {
                b.iter(|| build_matrix(&model, 74.76, n, method).unwrap())
            });
        }
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for n in [256, 1024] {
        let (_, matrix) = moderate_change(n);
        let matrix = Arc::new(matrix);
        group.bench_with_input(BenchmarkId::new("factor+arl", n), &n, |b, _| {
            b.iter(|| solve_arl_with(Arc::new(Factorization::new(matrix.clone()))).unwrap())
        });
        let system = Arc::new(Factorization::new(matrix.clone()));
        group.bench_with_input(BenchmarkId::new("arl-reusing-lu", n), &n, |b, _| {
            b.iter(|| solve_arl_with(system.clone()).unwrap())
        });
    }
    group.finish();
}

fn survival(c: &mut Criterion) {
    let (_, matrix) = moderate_change(256);
    c.bench_function("survival/256x1000", |b| {
        b.iter(|| survival_series(&matrix, 0.0, SurvivalOptions::horizon(1000)).unwrap())
    });
}

criterion_group!(benches, assembly, solve, survival);
criterion_main!(benches);
