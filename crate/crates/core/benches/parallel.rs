//! Sequential vs data-parallel evaluation of the same workloads. The
//! sequential side runs inside a one-thread pool, which is what the helpers
//! in `par` reduce to without the `parallel` feature.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddm_core::outer::{phi_estimate_batch, CoverParams};
use ddm_core::path::{cylinder_family, PhiSource};
use ddm_core::random::{random_chain, random_measure};
use ddm_core::{par, CylinderSet};
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn source(seed: u64) -> PhiSource<BigRational> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = random_chain(&mut rng).unwrap();
    let nu = random_measure(&mut rng, &sys).unwrap();
    PhiSource::markov(sys, nu)
}

fn batch(c: &mut Criterion) {
    let src = source(11);
    let queries: Vec<CylinderSet> = cylinder_family(src.alphabet(), 0, 3)
        .into_iter()
        .map(CylinderSet::single)
        .collect();
    let params = CoverParams {
        past_depth: 6,
        future_depth: 1,
        ..CoverParams::default()
    };
    let mut group = c.benchmark_group("phi_estimate_batch");
    group.sample_size(10);
    for workers in [1, 0] {
        let label = if workers == 1 { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::new(label, queries.len()), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || phi_estimate_batch(&src, &queries, &params)))
        });
    }
    group.finish();
}

fn profiles(c: &mut Criterion) {
    let sources: Vec<PhiSource<BigRational>> = (0..8).map(source).collect();
    let params = CoverParams {
        past_depth: 8,
        ..CoverParams::default()
    };
    let run = |s: &PhiSource<BigRational>| {
        let q = CylinderSet::full(s.alphabet(), 0);
        ddm_core::outer::phi_estimate(s, &q, &params).map(|e| e.value)
    };
    let mut group = c.benchmark_group("full_window_profiles");
    group.sample_size(10);
    for workers in [1, 0] {
        let label = if workers == 1 { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::new(label, sources.len()), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || par::map(&sources, run)))
        });
    }
    group.finish();
}

criterion_group!(benches, batch, profiles);
criterion_main!(benches);
