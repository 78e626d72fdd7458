//! Sequential vs rayon-parallel execution of the data-parallel paths:
//! per-query evaluation, the α × β grid search, and a multi-seed sweep.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use support_adapt::harness::{make_shift_benchmark, run_loaded_with, ExperimentSpec, LoadedDataset, Shots};
use support_adapt::predictor::{grid_search_with, DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID};
use support_adapt::support::build_support;
use support_adapt::{Execution, Predictor, PredictorConfig, Split, Variant};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn fixture(classes: usize, dim: usize, shots_available: usize) -> LoadedDataset {
    let (ds, w) = make_shift_benchmark(classes, dim, shots_available, 0.8, 0.2, 0).unwrap();
    LoadedDataset::new("bench", ds, w).unwrap()
}

fn bench_accuracy(c: &mut Criterion) {
    let data = fixture(16, 256, 350);
    let support = build_support(&data.data.split(Split::Train), 16, 0).unwrap();
    let test = data.data.split(Split::Test);
    let cfg = PredictorConfig::new(Variant::TipAdapter);
    let predictor = Predictor::new(cfg, None, Some(&support), &data.weights).unwrap();
    let mut group = c.benchmark_group("accuracy");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, test.len()), |b| {
            b.iter(|| predictor.accuracy_with(exec, black_box(&test)).unwrap())
        });
    }
    group.finish();
}

fn bench_grid(c: &mut Criterion) {
    let data = fixture(16, 256, 350);
    let support = build_support(&data.data.split(Split::Train), 16, 0).unwrap();
    let val = data.data.split(Split::Val);
    let cfg = PredictorConfig::new(Variant::TipAdapter);
    let mut group = c.benchmark_group("grid_search");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                grid_search_with(
                    exec,
                    &cfg,
                    black_box(&val),
                    None,
                    Some(&support),
                    &data.weights,
                    &DEFAULT_ALPHA_GRID,
                    &DEFAULT_BETA_GRID,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let data = [fixture(8, 64, 70)];
    let mut spec = ExperimentSpec {
        variants: vec![Variant::ClapS, Variant::TipAdapter, Variant::ClapSPlus],
        shots: vec![Shots::K(4), Shots::K(8)],
        ..ExperimentSpec::default()
    };
    spec.train.epochs = 5;
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| run_loaded_with(exec, &spec, black_box(&data)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_accuracy, bench_grid, bench_sweep);
criterion_main!(benches);
