use std::time::Instant;

use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::predictor::{Predictor, Variant};

use super::experiment::{hidden_width, sample_support, train_if_needed, training_config, Splits};
use super::{trainable_params, ExperimentSpec, LoadedDataset, Shots};

pub const TIMING_REPETITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    /// Median adapter training wall-clock; 0 for training-free variants.
    pub train_s: f64,
    /// Median test-set inference wall-clock per query.
    pub infer_ms: f64,
    pub params: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs[xs.len() / 2]
}

/// Times one variant at the spec's α, β and first seed, repeating the whole
/// train-and-infer cycle [`TIMING_REPETITIONS`] times.
pub fn time_variant(
    spec: &ExperimentSpec,
    ds: &LoadedDataset,
    variant: Variant,
    shots: Shots,
) -> Result<Timing> {
    spec.train.validate()?;
    let seed = *spec
        .seeds
        .first()
        .ok_or_else(|| Error::InvalidParameter("seeds must be non-empty".into()))?;
    let splits = Splits::new(ds);
    let support = if variant.needs_support() || variant.needs_adapter() {
        Some(sample_support(&splits.train, shots, seed)?)
    } else {
        None
    };
    let mut train = Vec::with_capacity(TIMING_REPETITIONS);
    let mut infer = Vec::with_capacity(TIMING_REPETITIONS);
    for _ in 0..TIMING_REPETITIONS {
        let trained = train_if_needed(spec, variant, support.as_ref(), ds, seed)?;
        let (adapter, train_s) = match &trained {
            Some((p, s)) => (Some(p), *s),
            None => (None, 0.0),
        };
        let predictor = Predictor::new(
            training_config(spec, variant),
            adapter,
            support.as_ref(),
            &ds.weights,
        )?;
        let start = Instant::now();
        predictor.accuracy_with(Execution::Sequential, &splits.test)?;
        infer.push(1e3 * start.elapsed().as_secs_f64() / splits.test.len() as f64);
        train.push(train_s);
    }
    Ok(Timing {
        train_s: median(train),
        infer_ms: median(infer),
        params: trainable_params(variant, ds.data.dim(), hidden_width(&spec.train, ds.data.dim())),
    })
}
