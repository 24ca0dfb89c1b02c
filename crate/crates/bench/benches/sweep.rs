use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use funczidm::sampler::Chain;
use funczidm::{Hyperparameters, SamplerConfig};
use funczidm_bench::fixture;

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    for &(taxa, covariates) in &[(20, 5), (50, 10), (250, 10)] {
        let (data, basis) = fixture(taxa, covariates, 1);
        let hyper = Hyperparameters::default();
        let config = SamplerConfig::desk();
        let mut chain = Chain::initialize(&data, &hyper, &basis, &config, 1).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("J{taxa}_P{covariates}")),
            &(),
            |b, _| b.iter(|| chain.sweep().unwrap()),
        );
    }
    group.finish();
}

fn basis(c: &mut Criterion) {
    let (data, basis) = fixture(5, 1, 2);
    let times = data.times();
    c.bench_function("basis_evaluate", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for &t in &times {
                s += basis.evaluate(t)[1];
            }
            s
        })
    });
}

criterion_group!(benches, sweep, basis);
criterion_main!(benches);
