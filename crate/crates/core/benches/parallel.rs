use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fbf_core::demos;
use fbf_core::imaging;
use fbf_core::linop;
use fbf_core::oracle::grid_refine_minimize;
use fbf_core::solver::{self, SolveOptions};
use fbf_core::ExecPolicy;

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn grid_oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid_oracle_3d");
    group.sample_size(10);
    let x = [0.7, -1.2, 0.3];
    let obj = |y: &[f64]| {
        let l1: f64 = y.iter().map(|v| v.abs()).sum();
        let d: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * l1 + 0.5 * d
    };
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| grid_refine_minimize(obj, &[-4.0; 3], &[4.0; 3], 6, black_box(exec)).unwrap())
        });
    }
    group.finish();
}

fn adjoint_check(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint_check_second_gradient_64");
    group.sample_size(10);
    let op = imaging::second_gradient_op(64, 64).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| linop::adjoint_check_with(&op, 64, 42, black_box(exec)).unwrap())
        });
    }
    group.finish();
}

fn deblur_iterations(c: &mut Criterion) {
    let mut group = c.benchmark_group("deblur_200_iterations");
    group.sample_size(10);
    let built = demos::deblur_problem().unwrap().build().unwrap();
    let (_, policy) = built.prepare().unwrap();
    for (name, exec) in POLICIES {
        let opts = SolveOptions {
            tol: 0.0,
            max_iter: 200,
            trace_every: 0,
            exec,
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solver::solve_unchecked(&built.system, &built.init, &policy, &built.errors, black_box(&opts)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, grid_oracle, adjoint_check, deblur_iterations);
criterion_main!(benches);
