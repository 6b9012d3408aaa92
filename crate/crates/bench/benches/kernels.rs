use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use penmcfm::data::standardize_penalized;
use penmcfm::em::{e_step, fit_em, initialize, m_step, EmOptions};
use penmcfm::gmifs::{gmifs_fit, GmifsOptions};
use penmcfm::model::observed_loglik_gradient;
use penmcfm::optim::{Penalty, SolverOptions};
use penmcfm::simulate::{simulate, SimulationScenario};
use penmcfm::SurvivalDataset;

fn dataset() -> SurvivalDataset {
    let sc = SimulationScenario { n: 500, p: 200, s: 10, block_size: 50, ..Default::default() };
    standardize_penalized(&simulate(&sc).expect("valid scenario").dataset).0
}

fn kernels(c: &mut Criterion) {
    let ds = dataset();
    let init = initialize(&ds, true).expect("initialization");
    let penalty = Penalty::unit(0.02, 1.0, 200, 200);
    let cache = e_step(&init, &ds).expect("finite E-step");

    c.bench_function("e_step n=500 P=200", |b| b.iter(|| e_step(black_box(&init), &ds)));
    c.bench_function("loglik gradient n=500 P=200", |b| b.iter(|| observed_loglik_gradient(black_box(&init), &ds)));
    c.bench_function("m_step n=500 P=200", |b| {
        b.iter(|| m_step(black_box(&init), &cache, &penalty, &ds, &SolverOptions::default()))
    });

    let mut group = c.benchmark_group("fits");
    group.sample_size(10);
    let opts = EmOptions { max_iter: 20, accelerate: true, ..Default::default() };
    group.bench_function("20 accelerated EM iterations", |b| b.iter(|| fit_em(&ds, &penalty, &init, &opts)));
    let gmifs = GmifsOptions { max_steps: 200, ..Default::default() };
    group.bench_function("200 GMIFS steps", |b| b.iter(|| gmifs_fit(&ds, true, &gmifs)));
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
