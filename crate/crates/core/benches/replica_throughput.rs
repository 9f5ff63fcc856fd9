//! Parallel vs sequential replica sweeps on the two main workloads. The two
//! drivers produce identical histograms (per-replica rng streams), so this
//! measures pure scheduling overhead and speedup.

use criterion::{criterion_group, criterion_main, Criterion};
use qsd_core::bpg::RootedTree;
use qsd_core::montecarlo::{
    yaglom_estimate_direct, yaglom_estimate_direct_sequential, BpgProcess, SizeProcess,
};
use qsd_core::OffspringDistribution;
use std::collections::BTreeMap;

fn size_chain(c: &mut Criterion) {
    let process = SizeProcess {
        offspring: OffspringDistribution::brw_offspring(0.5).unwrap(),
    };
    let mut group = c.benchmark_group("size_chain_20k_replicas");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| yaglom_estimate_direct(&process, &1, 3.0, 20_000, 42).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| yaglom_estimate_direct_sequential(&process, &1, 3.0, 20_000, 42).unwrap())
    });
    group.finish();
}

fn tree_chain(c: &mut Criterion) {
    let pmf: BTreeMap<u32, f64> = [(0, 0.6), (2, 0.4)].into_iter().collect();
    let process = BpgProcess {
        offspring: OffspringDistribution::validate(pmf, None, 1.0).unwrap(),
    };
    let start = RootedTree::single();
    let mut group = c.benchmark_group("tree_chain_5k_replicas");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| yaglom_estimate_direct(&process, &start, 3.0, 5_000, 42).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| yaglom_estimate_direct_sequential(&process, &start, 3.0, 5_000, 42).unwrap())
    });
    group.finish();
}

criterion_group!(benches, size_chain, tree_chain);
criterion_main!(benches);
