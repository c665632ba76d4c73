use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use markabs_bench::{lin_gauss, partition, quadrature};
use markabs_core::abstraction::{build_chain_averaged, initial_pmf, propagate};
use markabs_core::invariance::compare_bounds;
use markabs_core::oracle::{mc_invariance, AnalyticLinGauss};
use markabs_core::projection::algorithm1;
use markabs_core::{AxisBox, InterpScheme, InvarianceProblem};

fn chain_assembly(c: &mut Criterion) {
    let (k, init) = lin_gauss(1.2);
    let q = quadrature();
    let mut g = c.benchmark_group("averaged_chain");
    g.sample_size(10);
    for delta in [0.1, 0.05] {
        let p = partition(&k, &init, 5, delta);
        g.bench_with_input(BenchmarkId::from_parameter(delta), &p, |b, p| {
            b.iter(|| build_chain_averaged(&k, Arc::clone(p), &q).unwrap())
        });
    }
    g.finish();
}

fn pmf_propagation(c: &mut Criterion) {
    let (k, init) = lin_gauss(0.8);
    let q = quadrature();
    let p = partition(&k, &init, 5, 0.05);
    let chain = build_chain_averaged(&k, Arc::clone(&p), &q).unwrap();
    let p0 = initial_pmf(&init, &p, &q).unwrap();
    c.bench_function("propagate_5_steps", |b| {
        b.iter(|| propagate(black_box(&p0), &chain, 5).unwrap())
    });
}

fn first_order_scheme(c: &mut Criterion) {
    let (k, init) = lin_gauss(1.2);
    let q = quadrature();
    let p = partition(&k, &init, 5, 0.1);
    let scheme = InterpScheme::first_order(1).unwrap();
    let mut g = c.benchmark_group("algorithm1");
    g.sample_size(10);
    g.bench_function("first_order_delta_0.1", |b| {
        b.iter(|| algorithm1(&k, &init, Arc::clone(&p), scheme, 5, &q).unwrap())
    });
    g.finish();
}

fn invariance(c: &mut Criterion) {
    let (k, init) = lin_gauss(1.2);
    let problem = InvarianceProblem::new(AxisBox::unit(1), 10, k, init).unwrap();
    c.bench_function("compare_bounds", |b| {
        b.iter(|| compare_bounds(black_box(&problem), 0.7e-4).unwrap())
    });
    let model = AnalyticLinGauss::new(1.2, 0.0, 0.1, 0.0, 1.0).unwrap();
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function("mc_invariance_1e5", |b| {
        b.iter(|| mc_invariance(&model, &AxisBox::unit(1), 10, 100_000, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, chain_assembly, pmf_propagation, first_order_scheme, invariance);
criterion_main!(benches);
