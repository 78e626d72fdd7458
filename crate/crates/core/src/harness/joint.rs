use std::fmt;

use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::predictor::Variant;
use crate::support::SupportSet;

use super::experiment::{evaluate, hidden_width, sample_support, train_if_needed, Splits};
use super::report::{ResultTable, RunRecord};
use super::{trainable_params, ExperimentSpec, LoadedDataset, Shots};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// One adapter per dataset, trained on that dataset's support set.
    Independent,
    /// One adapter trained on the union of every dataset's support set.
    Joint,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 2] = [TrainingMode::Independent, TrainingMode::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::Independent => "independent",
            TrainingMode::Joint => "joint",
        }
    }

    /// Row label used in result tables, e.g. `clap-s-plus:joint`.
    pub fn label(self, variant: Variant) -> String {
        format!("{}:{}", variant.as_str(), self.as_str())
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn run_joint_vs_independent(
    spec: &ExperimentSpec,
    data: &[LoadedDataset],
) -> Result<ResultTable> {
    run_joint_vs_independent_with(Execution::default(), spec, data)
}

/// Trains every adapter variant in `spec` both ways and evaluates each
/// dataset with its own support set, val grid search and test split.
///
/// Training-free variants in `spec.variants` are skipped since both modes
/// coincide for them. The joint adapter is trained with the first
/// dataset's class weights.
pub fn run_joint_vs_independent_with(
    exec: Execution,
    spec: &ExperimentSpec,
    data: &[LoadedDataset],
) -> Result<ResultTable> {
    spec.validate_plan()?;
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidParameter("no datasets given".into()))?;
    for ds in &data[1..] {
        if ds.data.class_names() != first.data.class_names() {
            return Err(Error::LabelSpaceMismatch(format!(
                "{} has classes {:?}, {} has {:?}",
                first.name,
                first.data.class_names(),
                ds.name,
                ds.data.class_names()
            )));
        }
    }
    let variants: Vec<Variant> = spec
        .variants
        .iter()
        .copied()
        .filter(|v| v.needs_adapter())
        .collect();
    if variants.is_empty() {
        return Err(Error::InvalidParameter(
            "joint training needs at least one adapter variant".into(),
        ));
    }

    let splits: Vec<Splits> = data.iter().map(Splits::new).collect();
    let mut jobs = Vec::new();
    for &variant in &variants {
        for &shots in &spec.shots {
            for &seed in &spec.seeds {
                jobs.push((variant, shots, seed));
            }
        }
    }
    // one job yields the records of every (dataset, mode) pair
    let results = exec.try_map(&jobs, |&(variant, shots, seed)| {
        run_job(spec, data, &splits, variant, shots, seed)
    })?;

    let mut runs = Vec::with_capacity(results.len() * data.len() * 2);
    for d in 0..data.len() {
        for (vi, _) in variants.iter().enumerate() {
            for m in 0..TrainingMode::ALL.len() {
                let per_variant = spec.shots.len() * spec.seeds.len();
                for job in &results[vi * per_variant..(vi + 1) * per_variant] {
                    runs.push(job[d][m].clone());
                }
            }
        }
    }
    Ok(ResultTable::from_runs(runs))
}

/// Records indexed `[dataset][mode]`.
fn run_job(
    spec: &ExperimentSpec,
    data: &[LoadedDataset],
    splits: &[Splits],
    variant: Variant,
    shots: Shots,
    seed: u64,
) -> Result<Vec<[RunRecord; 2]>> {
    let supports = splits
        .iter()
        .map(|s| sample_support(&s.train, shots, seed))
        .collect::<Result<Vec<SupportSet>>>()?;
    let union = SupportSet::concat(&supports.iter().collect::<Vec<_>>())?;
    let (joint, joint_s) = train_if_needed(spec, variant, Some(&union), &data[0], seed)?
        .expect("filtered to adapter variants");

    let mut out = Vec::with_capacity(data.len());
    for (d, ds) in data.iter().enumerate() {
        let (own, own_s) = train_if_needed(spec, variant, Some(&supports[d]), ds, seed)?
            .expect("filtered to adapter variants");
        let dim = ds.data.dim();
        let record = |mode: TrainingMode, adapter, train_s| -> Result<RunRecord> {
            let eval = evaluate(spec, variant, ds, &splits[d], Some(adapter), Some(&supports[d]))?;
            Ok(RunRecord {
                dataset: ds.name.clone(),
                variant: mode.label(variant),
                shots,
                seed,
                alpha: eval.grid.alpha,
                beta: eval.grid.beta,
                val_acc: eval.grid.val_acc,
                test_acc: eval.test_acc,
                train_s,
                infer_ms: eval.infer_ms,
                params: trainable_params(variant, dim, hidden_width(&spec.train, dim)),
            })
        };
        out.push([
            record(TrainingMode::Independent, &own, own_s)?,
            record(TrainingMode::Joint, &joint, joint_s)?,
        ]);
    }
    Ok(out)
}
