use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cellfree::config::{Axis, SimConfig};
use cellfree::exec::Execution;
use cellfree::harness::run_point_with;

fn bench_config() -> SimConfig {
    SimConfig {
        n_channel_draws: 8,
        n_error_draws: 8,
        snr_db: Axis::Scalar(15.0),
        ..SimConfig::desk()
    }
}

fn run_point(c: &mut Criterion) {
    let cfg = bench_config();
    let mut group = c.benchmark_group("run_point");
    group.sample_size(10);
    let modes = [
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel),
    ];
    for (name, exec) in modes {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_point_with(&cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, run_point);
criterion_main!(benches);
