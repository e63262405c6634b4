//! Kernel timings on a one-thread pool against the default pool.
//! `cargo bench --no-default-features` times the sequential build instead;
//! there both pools run the same code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use thinfilm::energy::{self, Truncation};
use thinfilm::exec;
use thinfilm::grid::{Field, Grid};
use thinfilm::presets::Preset;
use thinfilm::prox::{self, ProxOptions};

const POOLS: [(&str, Option<usize>); 2] = [("1-thread", Some(1)), ("default", None)];

fn smooth(n: usize) -> Field {
    let g = Grid::new(2, n, 1.0).unwrap();
    Preset::RandomBandlimited { max_mode: 4, amplitude: 2e-3, seed: 1 }.build(g).unwrap()
}

fn laplacian(c: &mut Criterion) {
    let mut group = c.benchmark_group("laplacian");
    for n in [64, 128, 256] {
        let u = smooth(n);
        let g = *u.grid();
        let mut out = vec![0.0; g.cells()];
        for (pool, threads) in POOLS {
            group.bench_with_input(BenchmarkId::new(pool, n * n), &u, |b, u| {
                exec::with_threads(threads, || b.iter(|| g.laplacian_into(black_box(u.values()), &mut out)))
            });
        }
    }
    group.finish();
}

fn energy_report(c: &mut Criterion) {
    let mut group = c.benchmark_group("energy_report");
    for n in [64, 128, 256] {
        let u = smooth(n);
        for (pool, threads) in POOLS {
            group.bench_with_input(BenchmarkId::new(pool, n * n), &u, |b, u| {
                exec::with_threads(threads, || b.iter(|| energy::EnergyReport::of(black_box(u), Truncation::None)))
            });
        }
    }
    group.finish();
}

fn prox_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("prox_step");
    group.sample_size(10);
    for n in [64, 128] {
        let u = smooth(n);
        let opts = ProxOptions::new(1e-6);
        for (pool, threads) in POOLS {
            group.bench_with_input(BenchmarkId::new(pool, n * n), &u, |b, u| {
                exec::with_threads(threads, || b.iter(|| prox::prox_step(black_box(u), &opts).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, laplacian, energy_report, prox_step);
criterion_main!(benches);
