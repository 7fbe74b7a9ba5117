//! Benchmarks for the data-parallel hot paths, comparing the rayon path
//! against a sequential baseline.
//!
//! With the default `parallel` feature the rayon pool is used and a
//! one-thread pool provides the sequential comparison in the same run;
//! building with `--no-default-features` benches the compiled-in
//! sequential fallback instead (group names carry the mode).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use bounds_core::decomp::{solve_from_wk, SolverConfig};
use bounds_core::oracle::exact_min_enumerate;
use bounds_core::prebounds::compute_intermediate_bounds;
use bounds_core::testgen;

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn instances() -> Vec<(
    bounds_core::net::Network,
    bounds_core::domain::InputDomain,
    bounds_core::prebounds::PreActBounds,
    bounds_core::Tensor,
)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    (0..4)
        .map(|_| {
            let (net, dom) = testgen::random_relu_net(
                &mut rng,
                &testgen::NetConfig {
                    input_dim: (4, 4),
                    hidden_layers: (2, 2),
                    width: (16, 16),
                    ..Default::default()
                },
            );
            let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
            let c = testgen::random_objective(&mut rng, &net);
            (net, dom, bounds, c)
        })
        .collect()
}

fn bench_intermediate_bounds(crit: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let (net, dom) = testgen::random_relu_net(
        &mut rng,
        &testgen::NetConfig {
            input_dim: (6, 6),
            hidden_layers: (3, 3),
            width: (20, 20),
            ..Default::default()
        },
    );
    let mut group = crit.benchmark_group("intermediate_bounds");
    let run = || {
        compute_intermediate_bounds(&net, &dom).unwrap();
    };
    group.bench_function(BenchmarkId::from_parameter(mode()), |b| b.iter(&run));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function(BenchmarkId::from_parameter("one_thread"), |b| {
            b.iter(|| pool.install(run))
        });
    }
    group.finish();
}

fn bench_solvers(crit: &mut Criterion) {
    let insts = instances();
    let mut group = crit.benchmark_group("dual_solvers");
    for (name, config) in [
        ("supergradient_100", SolverConfig::supergradient(100)),
        ("proximal_50", SolverConfig::proximal(50)),
    ] {
        let run = || {
            for (net, dom, bounds, c) in &insts {
                solve_from_wk(net, dom, bounds, c, &config).unwrap();
            }
        };
        group.bench_function(BenchmarkId::new(name, mode()), |b| b.iter(run));
    }
    group.finish();
}

fn bench_enumeration(crit: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let (net, dom, bounds) = testgen::random_net_with_ambiguity(
        &mut rng,
        &testgen::NetConfig {
            width: (4, 8),
            hidden_layers: (2, 2),
            ..Default::default()
        },
        12,
    );
    let c = testgen::random_objective(&mut rng, &net);
    let mut group = crit.benchmark_group("exact_enumeration");
    let run = || {
        exact_min_enumerate(&net, &dom, &bounds, &c).unwrap();
    };
    group.bench_function(BenchmarkId::from_parameter(mode()), |b| b.iter(&run));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function(BenchmarkId::from_parameter("one_thread"), |b| {
            b.iter(|| pool.install(run))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_intermediate_bounds,
    bench_solvers,
    bench_enumeration
);
criterion_main!(benches);
