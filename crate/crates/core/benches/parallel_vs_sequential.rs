use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qmlopt_core::cokrige::{fit, FitOptions, ModelInputs};
use qmlopt_core::exec::Parallelism;
use qmlopt_core::quantile_est::{sectioning_panel, EstimatorCheck};
use qmlopt_core::sim_core::{BoxDomain, LossProblem, RngStream};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn estimator_monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimator_check");
    group.sample_size(10);
    let check = EstimatorCheck { n: 2_000, panels: 100, ..EstimatorCheck::default() };
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| check.run(mode).unwrap()));
    }
    group.finish();
}

fn two_level_fit(c: &mut Criterion) {
    let problem = LossProblem::exp1();
    let design: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 + 0.5) / 10.0]).collect();
    let panels: Vec<_> = design
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let s = problem.simulate(x, 500, &mut RngStream::new(1, i as u64)).unwrap();
            sectioning_panel(&s, &[0.6, 0.95], 10).unwrap()
        })
        .collect();
    let inputs = ModelInputs::from_panels(&design, &panels, &[0, 1]).unwrap();
    let domain = BoxDomain::cube(1, 0.0, 1.0);

    let mut group = c.benchmark_group("cokrige_fit");
    group.sample_size(10);
    for (name, mode) in MODES {
        let opts = FitOptions { starts: 4, evals_per_param: 60, parallelism: mode, ..FitOptions::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fit(&inputs, &domain, &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, estimator_monte_carlo, two_level_fit);
criterion_main!(benches);
