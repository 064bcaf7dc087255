use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use odflow::exec::Execution;
use odflow::forecast::ModelSpec;
use odflow::harness::{
    evaluate_model, generate_synthetic_city, prepare, write_synthetic_city, ExperimentConfig, SeasonalPattern,
    SyntheticSpec,
};

fn per_origin(c: &mut Criterion) {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SyntheticSpec { seed: 7, n_tiles: 16, days: 7, interval_seconds: 3600, pattern: SeasonalPattern::default() };
    let city = generate_synthetic_city(spec).expect("valid spec");
    let models = vec![
        ModelSpec::Ma { window: 3 },
        ModelSpec::Var { max_lag: 2, select_order: true, allow_ridge: false },
    ];
    let files = write_synthetic_city(&city, dir.path(), 1, models).expect("writable temp dir");
    let cfg = ExperimentConfig::load(&files.config).expect("generated config loads");
    let prepared = prepare(&cfg).expect("generated data prepares");

    let workers = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel { workers })];

    let mut group = c.benchmark_group("per_origin");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for spec in &cfg.models {
        for (name, exec) in modes {
            group.bench_with_input(BenchmarkId::new(spec.label(), name), &exec, |b, &exec| {
                b.iter(|| evaluate_model(spec, &prepared, &cfg.evaluation, cfg.postprocess, exec).expect("model runs"));
            });
        }
    }
    group.finish();
}

criterion_group!(benches, per_origin);
criterion_main!(benches);
