use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use psmr_bench::workload::CgKind;
use psmr_bench::{generate, run, Mix, RunOptions, WorkloadSpec};
use psmr_core::dependency::{validate_cg, validate_cg_sequential, PartitionRule};
use psmr_core::kvstore::shared_kv_cdep;
use psmr_core::replication::EngineKind;
use psmr_core::verify::{check_all, check_all_sequential, KvSpec, DEFAULT_BUDGET};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cg_validation(c: &mut Criterion) {
    let cdep = shared_kv_cdep();
    let rule = PartitionRule::new(&cdep, 8, "k").unwrap();
    let spec = WorkloadSpec {
        clients: 1,
        commands: 2_000,
        keys: 500,
        mix: Mix { read: 0.5, update: 0.3, insert: 0.1, delete: 0.1 },
        ..Default::default()
    };
    let sample = generate(&spec).unwrap().remove(0);
    let mut g = c.benchmark_group("validate_cg");
    g.throughput(Throughput::Elements((sample.len() * (sample.len() - 1) / 2) as u64));
    g.bench_function("rayon", |b| {
        b.iter(|| validate_cg(&cdep, &rule, black_box(&sample), &mut ChaCha8Rng::seed_from_u64(0)))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| validate_cg_sequential(&cdep, &rule, black_box(&sample), &mut ChaCha8Rng::seed_from_u64(0)))
    });
    g.finish();
}

fn linearizability(c: &mut Criterion) {
    let spec = WorkloadSpec {
        engine: EngineKind::Psmr,
        clients: 4,
        window: 4,
        commands: 200,
        keys: 32,
        mix: Mix { read: 0.4, update: 0.3, insert: 0.15, delete: 0.15 },
        ..Default::default()
    };
    let histories: Vec<_> = (0..16)
        .map(|seed| run(&WorkloadSpec { seed, ..spec.clone() }, &RunOptions::default()).unwrap().lin_history())
        .collect();
    let kv = KvSpec { preloaded: spec.keys };
    let mut g = c.benchmark_group("check_all");
    g.throughput(Throughput::Elements(histories.len() as u64));
    g.bench_function("rayon", |b| b.iter(|| check_all(black_box(&histories), &kv, DEFAULT_BUDGET)));
    g.bench_function("sequential", |b| {
        b.iter(|| check_all_sequential(black_box(&histories), &kv, DEFAULT_BUDGET))
    });
    g.finish();
}

fn engines(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    for engine in EngineKind::ALL {
        let spec = WorkloadSpec {
            engine,
            threads: 4,
            clients: 8,
            window: 50,
            commands: 500,
            mix: Mix::with_dependent_pct(5.0).unwrap(),
            work: 2_000,
            cg: CgKind::Partition,
            ..Default::default()
        };
        g.throughput(Throughput::Elements(spec.total_commands() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(engine), &spec, |b, spec| {
            b.iter(|| run(spec, &RunOptions::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, cg_validation, linearizability, engines);
criterion_main!(benches);
