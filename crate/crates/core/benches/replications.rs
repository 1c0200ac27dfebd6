use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use levy_cusum::eval::{estimate_arl, Regime};
use levy_cusum::{build_change_model, DetectorConfig, Execution, LevySpec, Rule, SimSettings};

fn arl_by_execution(c: &mut Criterion) {
    let model = build_change_model(LevySpec::brownian(1.0, 0.0), LevySpec::brownian(1.0, 1.0)).unwrap();
    let config = DetectorConfig::new(Rule::CusumContinuous, 2.0).unwrap();
    let mut group = c.benchmark_group("in_control_arl");
    group.sample_size(10);
    for execution in [Execution::Parallel, Execution::Sequential] {
        let sim = SimSettings {
            n_rep: 500,
            grid_dt: 1e-3,
            horizon: 200.0,
            master_seed: 1,
            execution,
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{execution:?}")), &sim, |b, sim| {
            b.iter(|| estimate_arl(&model, &config, Regime::InControl, sim).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, arl_by_execution);
criterion_main!(benches);
