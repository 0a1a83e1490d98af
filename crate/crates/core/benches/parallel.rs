//! Sequential against rayon execution for the two hot loops: batched rollout
//! gradients and lead-time evaluation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use faker_air::config::{DataSource, RunConfig};
use faker_air::datagen::generate_dataset;
use faker_air::eval::{evaluate_forecast, EvalOptions};
use faker_air::par::Exec;
use faker_air::sft::{batch_loss_grad, init_params, step_weights, TrainSet};

fn setup() -> (RunConfig, faker_air::datagen::Dataset) {
    let mut cfg = RunConfig::default();
    cfg.grid.nx = 32;
    cfg.grid.ny = 32;
    cfg.grid.stations = 12;
    cfg.data.steps = 240;
    let ds = generate_dataset(&cfg, Exec::Parallel).expect("dataset");
    (cfg, ds)
}

fn bench(c: &mut Criterion) {
    let (cfg, ds) = setup();
    let train = ds.train();
    let test = ds.test();
    let params = init_params(&cfg, &train).expect("params");
    let set = TrainSet::from_split(&train, DataSource::Fused, &params.norm).expect("train set");
    let weights = step_weights(4, 0.5).expect("weights");
    let batch: Vec<_> = set.samples(params.t_in, 4, 7).into_iter().take(8).collect();
    let mut opts = EvalOptions::new(cfg.eval.leads.clone(), cfg.eval.pollutant);
    opts.init_stride = 4;

    let mut g = c.benchmark_group("batch_loss_grad");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_loss_grad(black_box(&params), &set, &batch, &weights, &[0.5, 0.5], exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate_forecast");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_forecast(black_box(&params), &test.dense, &test.dense, &cfg.aqi, &opts, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
