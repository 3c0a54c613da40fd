use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use nmdp_core::harness::{build, preset};
use nmdp_core::optimizers::hpg_step;
use nmdp_core::{occupancy, occupancy_jacobian, successor_representation, TabularPolicy};

fn gridworld() -> (nmdp_core::harness::ExperimentConfig, nmdp_core::harness::Setup) {
    let config = preset("gridworld").expect("preset parses");
    let setup = build(&config).expect("preset builds");
    (config, setup)
}

fn occupancy_algebra(c: &mut Criterion) {
    let (_, setup) = gridworld();
    let cmp = &setup.problem.cmp;
    let pi = TabularPolicy::uniform(cmp.n_states(), cmp.n_actions());
    c.bench_function("gridworld/occupancy", |b| b.iter(|| occupancy(black_box(cmp), black_box(&pi)).unwrap()));
    c.bench_function("gridworld/successor", |b| {
        b.iter(|| successor_representation(black_box(cmp), black_box(&pi)).unwrap())
    });
    c.bench_function("gridworld/jacobian", |b| b.iter(|| occupancy_jacobian(black_box(cmp), black_box(&pi)).unwrap()));
}

fn hpg(c: &mut Criterion) {
    let (config, setup) = gridworld();
    c.bench_function("gridworld/hpg_step", |b| {
        b.iter(|| hpg_step(black_box(&setup.init), &setup.problem, &config.optimizer, &config.geometry).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = occupancy_algebra, hpg
}
criterion_main!(benches);
