use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tmoment_bench::{atomic_problem, omega1};
use tmoment_core::dominating::dominate_space;
use tmoment_core::extraction::{build_multiplication_system, extract_atoms};
use tmoment_core::flat::{build_flat_extension, moment_basis};
use tmoment_core::matrix::{moment_matrix, moment_matrix_ordered, psd_rank, recursive_consistency};
use tmoment_core::scp::{scp_solve, ScpOptions};
use tmoment_core::{solve_tmp, MonomialSet, SolveOptions};

fn checks(c: &mut Criterion) {
    let (gamma, _) = atomic_problem(2, 6, 6);
    let basis = MonomialSet::up_to_degree(2, 3);
    let m = moment_matrix(&gamma, &basis).unwrap();
    c.bench_function("moment_matrix 2 vars degree 3", |b| {
        b.iter(|| moment_matrix(black_box(&gamma), black_box(&basis)).unwrap())
    });
    c.bench_function("psd_rank 10x10", |b| b.iter(|| psd_rank(black_box(&m), 1e-9, 1e-8)));
    let report = psd_rank(&m, 1e-9, 1e-8);
    c.bench_function("recursive_consistency 10x10", |b| {
        b.iter(|| recursive_consistency(black_box(&m), &gamma, &report, 1e-6))
    });
}

fn solve(c: &mut Criterion) {
    let opts = SolveOptions::default();
    let mut g = c.benchmark_group("solve_tmp");
    for (n, r, degree) in [(1, 3, 6), (2, 3, 4), (2, 6, 6)] {
        let (gamma, set) = atomic_problem(n, r, degree);
        g.bench_function(format!("n={n} r={r} degree {degree}"), |b| {
            b.iter(|| solve_tmp(black_box(&gamma), &set, &[], &opts).unwrap())
        });
    }
    g.finish();

    let (gamma, _) = atomic_problem(1, 3, 4);
    c.bench_function("build_flat_extension 1 var 3 atoms", |b| {
        b.iter(|| build_flat_extension(black_box(&gamma), &MonomialSet::up_to_degree(1, 2), 2, 1e-8).unwrap())
    });
}

fn extraction(c: &mut Criterion) {
    let (gamma, set) = atomic_problem(2, 6, 6);
    let m = moment_matrix_ordered(&gamma, &moment_basis(&set)).unwrap();
    let opts = SolveOptions::default().extract_options();
    c.bench_function("extract 6 planar atoms", |b| {
        b.iter(|| {
            let sys = build_multiplication_system(black_box(&m), 1e-8).unwrap();
            extract_atoms(&sys, &gamma, &opts).unwrap()
        })
    });
}

fn domination_and_scp(c: &mut Criterion) {
    c.bench_function("dominate_space degree 7, 3 vars", |b| {
        b.iter(|| dominate_space(black_box(7), 3).unwrap())
    });
    let w = omega1();
    let opts = ScpOptions::default();
    c.bench_function("scp_solve omega1", |b| b.iter(|| scp_solve(black_box(&w), &opts).unwrap()));
}

criterion_group!(benches, checks, solve, extraction, domination_and_scp);
criterion_main!(benches);
