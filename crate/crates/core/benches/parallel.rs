//! Parallel vs sequential throughput of the two data-parallel hot paths:
//! multi-seed simulation sweeps and Monte Carlo verifier trials.
//!
//! Build with default features to get the rayon path; `--no-default-features`
//! turns the Auto variants sequential, at which point both sides coincide.

use criterion::{criterion_group, criterion_main, Criterion};

use ehsgd_core::analysis::{
    unbiasedness_test, unbiasedness_test_seq, variance_term_check, variance_term_check_seq,
    FrozenUser, WeightRule,
};
use ehsgd_core::objective::{LossName, PartitionMode, SyntheticSpec};
use ehsgd_core::scheduling::SchedulerPolicy;
use ehsgd_core::training::{run_seeds, run_seeds_sequential, RunConfig};

fn sweep_config() -> RunConfig {
    RunConfig {
        num_users: 12,
        horizon: 300,
        seed: 1,
        eta: 0.1,
        eta_decay_kappa: None,
        policy: SchedulerPolicy::DeterministicUniformSlot,
        arrivals: None,
        arrival_periods: Some(vec![1, 3, 5, 8]),
        objective: SyntheticSpec {
            kind: LossName::Quadratic,
            dim: 8,
            points_per_user: 4,
            mode: PartitionMode::Iid,
            lambda: 0.1,
            skew: 0.8,
            num_groups: 4,
            separation: 2.0,
            data_seed: 9,
        },
        metric_cadence: 50,
        bound_check: false,
        w0: None,
        record_models: false,
        constants_probe: None,
    }
}

fn frozen_users() -> Vec<FrozenUser> {
    let rules = [
        WeightRule::UniformSlot { interval: 4 },
        WeightRule::BestEffortBernoulli { beta: 0.25 },
        WeightRule::BestEffortUniform { period: 5 },
        WeightRule::UniformSlot { interval: 2 },
    ];
    rules
        .iter()
        .enumerate()
        .map(|(i, &rule)| FrozenUser {
            data_weight: 0.25,
            rule,
            gradient: (0..8).map(|k| ((i + k) as f64 * 0.37).sin()).collect(),
        })
        .collect()
}

fn bench_seed_sweep(c: &mut Criterion) {
    let cfg = sweep_config();
    let seeds: Vec<u64> = (0..32).collect();
    let mut group = c.benchmark_group("seed_sweep_32");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| run_seeds(&cfg, &seeds).unwrap());
    });
    group.bench_function("sequential", |b| {
        b.iter(|| run_seeds_sequential(&cfg, &seeds).unwrap());
    });
    group.finish();
}

fn bench_verifiers(c: &mut Criterion) {
    let users = frozen_users();
    let trials = 100_000;
    let mut group = c.benchmark_group("verifier_100k");
    group.sample_size(10);
    group.bench_function("unbiasedness_parallel", |b| {
        b.iter(|| unbiasedness_test("bench", &users, trials, 7));
    });
    group.bench_function("unbiasedness_sequential", |b| {
        b.iter(|| unbiasedness_test_seq("bench", &users, trials, 7));
    });
    group.bench_function("variance_parallel", |b| {
        b.iter(|| variance_term_check("bench", &users, trials, 7, None));
    });
    group.bench_function("variance_sequential", |b| {
        b.iter(|| variance_term_check_seq("bench", &users, trials, 7, None));
    });
    group.finish();
}

criterion_group!(benches, bench_seed_sweep, bench_verifiers);
criterion_main!(benches);
