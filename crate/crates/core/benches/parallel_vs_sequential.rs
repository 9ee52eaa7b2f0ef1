use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lincoag::parallel::Exec;
use lincoag::resolvent::{geometric_nodes, DiscreteGenerator, GeneratorSpec};
use lincoag::simulator::{ensemble, ScattererLaw, SimOptions};

fn bench_ensemble(c: &mut Criterion) {
    let law = ScattererLaw::shifted(1.9).unwrap();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| ensemble(2000, 0.0, &[10.0, 100.0], &law, 1, SimOptions::drift(1e-2), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_generator(c: &mut Criterion) {
    let nodes = geometric_nodes(1e-4, 1e3, 300);
    let spec = GeneratorSpec::GInfinity { sigma: 1.8, epsilon: 1e-3 };
    let mut group = c.benchmark_group("generator_assembly");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| DiscreteGenerator::new(&nodes, &spec, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_ensemble, bench_generator);
criterion_main!(benches);
