use std::hint::black_box;

use blocksplit::{run, run_economical};
use blocksplit_bench::{lasso_fixed_steps, least_squares_cyclic};
use criterion::{criterion_group, criterion_main, Criterion};

fn variants(c: &mut Criterion) {
    for inst in [lasso_fixed_steps(), least_squares_cyclic()] {
        let mut group = c.benchmark_group(inst.name);
        group.bench_function("direct", |b| {
            b.iter(|| run(&inst.problem, &inst.config, black_box(inst.x0.clone())).unwrap())
        });
        group.bench_function("economical", |b| {
            b.iter(|| run_economical(&inst.problem, &inst.config, black_box(inst.x0.clone())).unwrap())
        });
        group.finish();
    }
}

fn threads(c: &mut Criterion) {
    let inst = lasso_fixed_steps();
    let mut group = c.benchmark_group("lasso_threads");
    for t in [1, 2, 4] {
        let config = inst.config.clone().threads(t);
        group.bench_function(format!("threads_{t}"), |b| {
            b.iter(|| run(&inst.problem, &config, black_box(inst.x0.clone())).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, variants, threads);
criterion_main!(benches);
