//! Benchmarks for the hot paths: the full balanced fit, base learners, the
//! exact oracles, and deployment throughput.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use bql_core::baselines::lasso_fit;
use bql_core::bql::{fit_bql, BqlConfig};
use bql_core::eval::{backward_induction_optimal, random_instance};
use bql_core::nuisance::{fit_forest, ForestParams};
use bql_core::seed::rng_for;
use bql_core::synth::{generate, model_preset, run_on_simulator};
use rand::Rng;
use rand_distr::StandardNormal;

fn bench_fit(c: &mut Criterion) {
    let preset = model_preset(2).unwrap();
    let mut costs = preset.costs.clone();
    costs.lambda = 0.5;
    let mut group = c.benchmark_group("fit_bql_ridge");
    for n in [200usize, 500] {
        let d = generate(&preset.generative, n, 1).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| {
            b.iter(|| {
                fit_bql(d, &preset.catalog, &costs, &BqlConfig::ridge_only(2)).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_forest(c: &mut Criterion) {
    let mut rng = rng_for(3, &[]);
    let x: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] - r[1] * r[2]).collect();
    let params = ForestParams { trees: 100, ..Default::default() };
    c.bench_function("forest_100_trees_n500", |b| {
        b.iter(|| fit_forest(black_box(&x), black_box(&y), &params, 4))
    });
}

fn bench_oracle(c: &mut Criterion) {
    let inst = random_instance(5);
    c.bench_function("backward_induction", |b| {
        b.iter(|| backward_induction_optimal(black_box(&inst), 1.0).unwrap())
    });
}

fn bench_lasso(c: &mut Criterion) {
    let mut rng = rng_for(6, &[]);
    let x: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[3]).collect();
    c.bench_function("lasso_cd_n500_p12", |b| {
        b.iter(|| lasso_fit(black_box(&x), black_box(&y), 0.05).unwrap())
    });
}

fn bench_deploy(c: &mut Criterion) {
    let preset = model_preset(2).unwrap();
    let d = generate(&preset.generative, 300, 7).unwrap();
    let regime = fit_bql(&d, &preset.catalog, &preset.costs, &BqlConfig::ridge_only(8)).unwrap();
    c.bench_function("deploy_1000_subjects", |b| {
        b.iter(|| {
            run_on_simulator(&preset.generative, &regime, &preset.costs, 1000, 9).unwrap()
        })
    });
}

criterion_group!(benches, bench_fit, bench_forest, bench_oracle, bench_lasso, bench_deploy);
criterion_main!(benches);
