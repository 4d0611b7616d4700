//! Sequential versus data-parallel execution of whole workflows.
//!
//! Without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use maw_core::io::{generate_synthetic, Corpus, SynthConfig};
use maw_core::pipeline::{execute_workflow, preset, ExecConfig};

fn corpus() -> Corpus {
    generate_synthetic(&SynthConfig {
        seed: 42,
        users: 32,
        days: 2,
        osc_rate: 0.02,
        ..Default::default()
    })
    .expect("valid synthetic config")
    .corpus()
}

fn workflows(c: &mut Criterion) {
    let corpus = corpus();
    let mut group = c.benchmark_group("workflow");
    group.sample_size(10);
    group.throughput(Throughput::Elements(corpus.record_count() as u64));
    for name in ["workflow3", "workflow6", "integration"] {
        let spec = preset(name).expect("known preset");
        for (label, workers) in [("sequential", 1), ("parallel", 0)] {
            let cfg = ExecConfig {
                workers,
                memory_sample_interval: None,
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(name, label), &cfg, |b, cfg| {
                b.iter(|| execute_workflow(black_box(&spec), black_box(&corpus), cfg).expect("run succeeds"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, workflows);
criterion_main!(benches);
