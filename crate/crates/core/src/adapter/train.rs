use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictorConfig;
use crate::store::ClassWeights;
use crate::support::SupportSet;

use super::{adapter_backward, default_hidden, AdamW, AdapterParams, Query, DEFAULT_RESIDUAL_RATIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub adamw_betas: (f64, f64),
    pub adamw_eps: f64,
    /// `None` means a quarter of the embedding width.
    pub hidden: Option<usize>,
    pub residual_ratio: f64,
}

impl TrainConfig {
    pub const DEFAULT_LR: f64 = 1e-5;
    pub const DEFAULT_BATCH_SIZE: usize = 64;
    pub const DEFAULT_EPOCHS: usize = 20;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        let (b1, b2) = self.adamw_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || !(self.adamw_eps > 0.0) {
            return bad("AdamW betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.residual_ratio) {
            return bad(format!("residual ratio must lie in [0, 1], got {}", self.residual_ratio));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: Self::DEFAULT_LR,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            epochs: Self::DEFAULT_EPOCHS,
            weight_decay: Self::DEFAULT_WEIGHT_DECAY,
            seed: 0,
            adamw_betas: (0.9, 0.999),
            adamw_eps: 1e-8,
            hidden: None,
            residual_ratio: DEFAULT_RESIDUAL_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAdapter {
    pub params: AdapterParams,
    /// Mean training loss per epoch, measured before each step.
    pub loss_trace: Vec<f64>,
}

/// Trains an adapter on the support records themselves.
///
/// Each support row is a training query that retrieves against every other
/// row (its own key is left out). Batches follow a seeded per-epoch shuffle;
/// the whole run is deterministic for a fixed seed.
pub fn train_adapter(
    support: &SupportSet,
    class_weights: &ClassWeights,
    config: &TrainConfig,
    predictor: &PredictorConfig,
) -> Result<TrainedAdapter> {
    config.validate()?;
    predictor.validate()?;
    if !predictor.variant.needs_adapter() {
        return Err(Error::InvalidParameter(format!(
            "variant {} has no adapter to train",
            predictor.variant
        )));
    }
    if support.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if support.num_classes() != class_weights.num_classes() {
        return Err(Error::DimMismatch {
            context: "support classes vs class weights",
            expected: class_weights.num_classes(),
            found: support.num_classes(),
        });
    }
    let dim = support.dim();
    let hidden = config.hidden.unwrap_or_else(|| default_hidden(dim));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = AdapterParams::init_with(dim, hidden, config.residual_ratio, &mut rng)?;
    let weights = class_weights.matrix();
    let mut opt = AdamW::new(
        config.lr,
        config.adamw_betas,
        config.adamw_eps,
        config.weight_decay,
    );

    let mut order: Vec<usize> = (0..support.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Query> = chunk
                .iter()
                .map(|&i| Query {
                    u0: support.keys().row(i),
                    label: support.labels()[i],
                    exclude_key: Some(i),
                })
                .collect();
            let (loss, grads) = adapter_backward(&params, &batch, predictor, Some(support), &weights)?;
            epoch_loss += loss * chunk.len() as f64;
            let g = grads.tensors();
            opt.step(&mut params.tensors_mut(), &g)?;
        }
        loss_trace.push(epoch_loss / support.len() as f64);
    }
    Ok(TrainedAdapter { params, loss_trace })
}
