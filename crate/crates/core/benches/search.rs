//! Data-parallel kernels on the global rayon pool against a one-thread pool.
//! Built without the `parallel` feature, the same kernels run sequentially.

#[path = "../tests/common/mod.rs"]
mod common;

use criterion::{criterion_group, criterion_main, Criterion};
use ibis_core::oracle::{score_all_orders, DEFAULT_N_MAX};
use ibis_core::search::moves::rank_kopt_moves;
use ibis_core::search::AuxGraph;
use ibis_core::{ibis_search, rng_from_seed, SearchConfig};
use std::hint::black_box;

fn kernels(c: &mut Criterion, label: &str, run: &dyn Fn(&mut (dyn FnMut() + Send))) {
    let t = common::toy();
    let lm = t.model(3);
    let mut rng = rng_from_seed(1);
    let long = t.seq(&t.source.sentence(40, &mut rng));
    let graph = AuxGraph::build(&lm, &long).unwrap();
    let candidates: Vec<usize> = (0..=40).step_by(2).collect();
    let bag8 = t.bag(8, &mut rng);
    let bag20 = t.bag(20, &mut rng);
    let config = SearchConfig { patience: 32, seed: 3, ..Default::default() };

    let mut group = c.benchmark_group(label);
    group.sample_size(10);
    group.bench_function("rank-5opt-21-cuts", |b| {
        b.iter(|| run(&mut || drop(black_box(rank_kopt_moves(&graph, &candidates, 5, &[2, 0, 3, 1])))))
    });
    group.bench_function("score-all-orders-8", |b| {
        b.iter(|| run(&mut || drop(black_box(score_all_orders(&bag8, &[], &lm, DEFAULT_N_MAX).unwrap()))))
    });
    group.bench_function("ibis-search-20", |b| {
        b.iter(|| run(&mut || drop(black_box(ibis_search(&bag20, &[], &lm, &config).unwrap()))))
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    kernels(c, "rayon-default", &|f| f());
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    kernels(c, "rayon-one-thread", &|f| single.install(&mut *f));
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    kernels(c, "sequential", &|f| f());
}

criterion_group!(benches, bench);
criterion_main!(benches);
