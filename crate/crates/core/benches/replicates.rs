use criterion::{criterion_group, criterion_main, Criterion};

use annokn_core::simulation::{run_comparison, AnnotationKind, ComparisonOptions, Method, Signal, SimScenario};
use annokn_core::{Execution, GridSpec, PipelineConfig};

fn scenario() -> SimScenario {
    SimScenario {
        n: 400,
        p: 60,
        rho: 0.5,
        n_causal: 10,
        causal_pool: 20,
        causal_prob_exponent: 2.0,
        signal: Signal::H2(0.3),
        annotation: AnnotationKind::Index,
        noise_annotations: 0,
        replicates: 4,
        seed: 1,
    }
}

fn options(execution: Execution) -> ComparisonOptions {
    ComparisonOptions {
        methods: vec![Method::Knockoffs, Method::AnnoKnLite, Method::AnnoGk],
        q_grid: vec![0.1, 0.2],
        config: PipelineConfig {
            lambda0_grid: GridSpec::Relative {
                count: 10,
                lo_frac: 0.02,
            },
            execution,
            ..PipelineConfig::default()
        },
        execution,
        ..ComparisonOptions::default()
    }
}

fn bench(c: &mut Criterion) {
    let s = scenario();
    let mut group = c.benchmark_group("run_comparison");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let opts = options(exec);
        group.bench_function(name, |b| b.iter(|| run_comparison(&s, &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
