use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deskmate::dataset;
use deskmate::eval::{run_benchmark, BenchConfig, Execution, Shared};
use deskmate::llm::PolicyBackend;
use deskmate::scenario::Scenario;

fn runs(c: &mut Criterion) {
    let scenario = Arc::new(Scenario::bundled());
    let all = dataset::bundled();
    let factory = Shared(Arc::new(PolicyBackend::new()));
    let mut group = c.benchmark_group("run_benchmark");
    group.sample_size(10);
    for n in [30, all.len()] {
        let entries = &all[..n];
        for (name, execution) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
            let cfg = BenchConfig {
                runs: 5,
                execution,
                ..BenchConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &cfg, |b, cfg| {
                b.iter(|| run_benchmark(entries, scenario.clone(), cfg, &factory).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, runs);
criterion_main!(benches);
