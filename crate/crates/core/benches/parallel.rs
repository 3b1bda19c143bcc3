//! Sinkhorn and one MFL step on a single-thread pool versus the default pool.
//! Build with `--no-default-features` to time the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfl_core::bridge::{sinkhorn_balanced, CostSpec, SinkhornOptions};
use mfl_core::optimizer::{init_particles, mfl_step, OptimizerState, Scales};
use mfl_core::simulate::Benchmark;
use mfl_core::{ProblemConfig, SnapshotSeries, WeightedPoints};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> WeightedPoints {
    let data = (0..n * d).map(|_| rng.random::<f64>() + shift).collect();
    WeightedPoints::uniform(mfl_core::Points::new(d, data).unwrap())
}

fn pools() -> Vec<(String, Option<rayon::ThreadPool>)> {
    let mut out = vec![("default".to_string(), None)];
    #[cfg(feature = "parallel")]
    out.push((
        "1-thread".to_string(),
        Some(rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ));
    out
}

fn in_pool<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn bench_sinkhorn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = cloud(256, 10, 0.0, &mut rng);
    let b = cloud(256, 10, 0.3, &mut rng);
    let opts = SinkhornOptions::default();
    let mut group = c.benchmark_group("sinkhorn_256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |bench| {
            bench.iter(|| in_pool(&pool, || sinkhorn_balanced(&a, &b, CostSpec::default(), 0.1, &opts, None).unwrap()))
        });
    }
    group.finish();
}

fn bench_step(c: &mut Criterion) {
    let bench = Benchmark::bifurcation();
    let data = bench.generate(&bench.counts(16), 16, 3).unwrap();
    let series: SnapshotSeries = data.observed;
    let mut cfg = ProblemConfig::bifurcation_benchmark();
    cfg.m = 64;
    cfg.eta = 0.01;
    let schedule = cfg.schedule();
    let start = OptimizerState::new(init_particles(&series, &cfg).unwrap(), 0);
    let mut group = c.benchmark_group("mfl_step_m64");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| {
                in_pool(&pool, || {
                    let mut state = start.clone();
                    mfl_step(&mut state, &series, &cfg, &schedule, Scales::default(), false).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sinkhorn, bench_step);
criterion_main!(benches);
