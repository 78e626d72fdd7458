use std::time::Instant;

use crate::adapter::{default_hidden, train_adapter, AdapterParams, TrainConfig};
use crate::error::Result;
use crate::parallel::Execution;
use crate::predictor::{grid_search_with, GridResult, Predictor, PredictorConfig, Variant};
use crate::store::{EmbeddingDataset, Split};
use crate::support::{build_full_support, build_support, SupportSet};

use super::report::{ResultTable, RunRecord};
use super::{trainable_params, ExperimentSpec, LoadedDataset, Shots};

/// Loads every dataset in `spec` and runs the full sweep.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_experiment_with(Execution::default(), spec)
}

pub fn run_experiment_with(exec: Execution, spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate_plan()?;
    let data = spec.load_datasets()?;
    run_loaded_with(exec, spec, &data)
}

/// Runs the sweep over already loaded datasets; `spec.datasets` is ignored.
pub fn run_loaded(spec: &ExperimentSpec, data: &[LoadedDataset]) -> Result<ResultTable> {
    run_loaded_with(Execution::default(), spec, data)
}

/// Every (dataset, variant, shots, seed) run is independent, so runs are
/// spread over `exec`; each run is sequential inside. Records come back in
/// loop order whatever the execution mode.
pub fn run_loaded_with(
    exec: Execution,
    spec: &ExperimentSpec,
    data: &[LoadedDataset],
) -> Result<ResultTable> {
    spec.validate_plan()?;
    let splits: Vec<Splits> = data.iter().map(Splits::new).collect();
    let mut jobs = Vec::new();
    for d in 0..data.len() {
        for &variant in &spec.variants {
            for &shots in &spec.shots {
                for &seed in &spec.seeds {
                    jobs.push((d, variant, shots, seed));
                }
            }
        }
    }
    let runs = exec.try_map(&jobs, |&(d, variant, shots, seed)| {
        let ds = &data[d];
        let sp = &splits[d];
        let support = if variant.needs_support() || variant.needs_adapter() {
            Some(sample_support(&sp.train, shots, seed)?)
        } else {
            None
        };
        let trained = train_if_needed(spec, variant, support.as_ref(), ds, seed)?;
        let (adapter, train_s) = match &trained {
            Some((p, s)) => (Some(p), *s),
            None => (None, 0.0),
        };
        let eval = evaluate(spec, variant, ds, sp, adapter, support.as_ref())?;
        Ok(RunRecord {
            dataset: ds.name.clone(),
            variant: variant.as_str().to_string(),
            shots,
            seed,
            alpha: eval.grid.alpha,
            beta: eval.grid.beta,
            val_acc: eval.grid.val_acc,
            test_acc: eval.test_acc,
            train_s,
            infer_ms: eval.infer_ms,
            params: trainable_params(variant, ds.data.dim(), hidden_width(&spec.train, ds.data.dim())),
        })
    })?;
    Ok(ResultTable::from_runs(runs))
}

pub(crate) struct Splits {
    pub train: EmbeddingDataset,
    pub val: EmbeddingDataset,
    pub test: EmbeddingDataset,
}

impl Splits {
    pub fn new(ds: &LoadedDataset) -> Self {
        Self {
            train: ds.data.split(Split::Train),
            val: ds.data.split(Split::Val),
            test: ds.data.split(Split::Test),
        }
    }
}

pub(crate) fn hidden_width(train: &TrainConfig, dim: usize) -> usize {
    train.hidden.unwrap_or_else(|| default_hidden(dim))
}

pub(crate) fn sample_support(train: &EmbeddingDataset, shots: Shots, seed: u64) -> Result<SupportSet> {
    match shots {
        Shots::K(k) => build_support(train, k, seed),
        Shots::Full => build_full_support(train, seed),
    }
}

/// Config the adapter is trained under: the spec's α (unless the variant
/// pins it), β and scale.
pub(crate) fn training_config(spec: &ExperimentSpec, variant: Variant) -> PredictorConfig {
    let mut cfg = PredictorConfig::new(variant)
        .with_beta(spec.beta)
        .with_scale(spec.scale);
    if variant.layout().forced_alpha.is_none() {
        cfg = cfg.with_alpha(spec.alpha);
    }
    cfg
}

/// Trains an adapter on `support` when `variant` has one. The training
/// seed is the run seed.
pub(crate) fn train_if_needed(
    spec: &ExperimentSpec,
    variant: Variant,
    support: Option<&SupportSet>,
    ds: &LoadedDataset,
    seed: u64,
) -> Result<Option<(AdapterParams, f64)>> {
    if !variant.needs_adapter() {
        return Ok(None);
    }
    let support = support.expect("adapter variants always sample a support set");
    let train = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let start = Instant::now();
    let trained = train_adapter(support, &ds.weights, &train, &training_config(spec, variant))?;
    Ok(Some((trained.params, start.elapsed().as_secs_f64())))
}

pub(crate) struct Evaluation {
    pub grid: GridResult,
    pub test_acc: f64,
    pub infer_ms: f64,
}

/// Grid search on val, then test accuracy at the chosen (α, β).
pub(crate) fn evaluate(
    spec: &ExperimentSpec,
    variant: Variant,
    ds: &LoadedDataset,
    splits: &Splits,
    adapter: Option<&AdapterParams>,
    support: Option<&SupportSet>,
) -> Result<Evaluation> {
    let template = training_config(spec, variant);
    let grid = grid_search_with(
        Execution::Sequential,
        &template,
        &splits.val,
        adapter,
        support,
        &ds.weights,
        &spec.alpha_grid,
        &spec.beta_grid,
    )?;
    let cfg = template.with_alpha(grid.alpha).with_beta(grid.beta);
    let predictor = Predictor::new(cfg, adapter, support, &ds.weights)?;
    let start = Instant::now();
    let test_acc = predictor.accuracy_with(Execution::Sequential, &splits.test)?;
    let infer_ms = 1e3 * start.elapsed().as_secs_f64() / splits.test.len() as f64;
    Ok(Evaluation {
        grid,
        test_acc,
        infer_ms,
    })
}
