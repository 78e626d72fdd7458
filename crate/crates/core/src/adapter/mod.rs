//! Two-layer residual MLP adapter mapping text-aligned embeddings `u0` to
//! task-aligned embeddings `u_f`.
//!
//! ```text
//! h     = relu(W1·u0 + b1)
//! raw   = W2·h + b2
//! mixed = r·raw + (1 - r)·u0
//! u_f   = mixed / ‖mixed‖
//! ```
//!
//! `r` is the residual ratio; `r = 0` is an exact pass-through.

mod adamw;
mod checkpoint;
mod loss;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub use adamw::AdamW;
pub use checkpoint::{load_adapter, save_adapter, CHECKPOINT_MAGIC};
pub use loss::{adapter_backward, adapter_loss, Query};
pub use train::{train_adapter, TrainConfig, TrainedAdapter};

pub const DEFAULT_RESIDUAL_RATIO: f64 = 0.2;

/// Outputs with a pre-normalization norm below this are rejected.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

/// Hidden width used when none is configured: a quarter of the embedding
/// width, at least one.
pub fn default_hidden(dim: usize) -> usize {
    (dim / 4).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// `H × C`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `C × H`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub residual_ratio: f64,
}

/// Gradients with the same shapes as [`AdapterParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl AdapterGrads {
    pub fn zeros_like(p: &AdapterParams) -> Self {
        Self {
            w1: Matrix::zeros(p.hidden(), p.dim()),
            b1: vec![0.0; p.hidden()],
            w2: Matrix::zeros(p.dim(), p.hidden()),
            b2: vec![0.0; p.dim()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }
}

pub const TENSOR_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

/// Intermediate values from [`AdapterParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre_act: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    pub output: Vec<f64>,
}

impl AdapterParams {
    /// Seeded uniform(±1/√fan_in) weights, zero biases.
    pub fn init(dim: usize, hidden: usize, residual_ratio: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(dim, hidden, residual_ratio, &mut rng)
    }

    pub(crate) fn init_with<R: Rng>(
        dim: usize,
        hidden: usize,
        residual_ratio: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(dim, hidden, residual_ratio)?;
        let b1 = 1.0 / (dim as f64).sqrt();
        p.w1.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-b1..=b1));
        let b2 = 1.0 / (hidden as f64).sqrt();
        p.w2.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-b2..=b2));
        Ok(p)
    }

    pub fn zeros(dim: usize, hidden: usize, residual_ratio: f64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidParameter(format!(
                "adapter shape must be positive, got dim {dim}, hidden {hidden}"
            )));
        }
        if !(0.0..=1.0).contains(&residual_ratio) {
            return Err(Error::InvalidParameter(format!(
                "residual ratio must lie in [0, 1], got {residual_ratio}"
            )));
        }
        Ok(Self {
            w1: Matrix::zeros(hidden, dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(dim, hidden),
            b2: vec![0.0; dim],
            residual_ratio,
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    /// Trainable scalars: `2·C·H + H + C`.
    pub fn param_count(&self) -> usize {
        param_count(self.dim(), self.hidden())
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let (c, h) = (self.dim(), self.hidden());
        let shapes_ok = self.b1.len() == h
            && self.w2.rows() == c
            && self.w2.cols() == h
            && self.b2.len() == c;
        if !shapes_ok {
            return Err(Error::InvalidParameter("inconsistent adapter shapes".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite()))
            || !self.residual_ratio.is_finite()
        {
            return Err(Error::NonFiniteValue {
                context: "adapter parameters".into(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, u0: &[f64]) -> Result<Vec<f64>> {
        self.forward_cached(u0).map(|c| c.output)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn forward_cached(&self, u0: &[f64]) -> Result<ForwardCache> {
        if u0.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "adapter input",
                expected: self.dim(),
                found: u0.len(),
            });
        }
        let r = self.residual_ratio;
        let mut pre_act = vec![0.0; self.hidden()];
        self.w1.matvec(u0, &mut pre_act);
        let hidden: Vec<f64> = pre_act
            .iter_mut()
            .zip(&self.b1)
            .map(|(z, b)| {
                *z += b;
                z.max(0.0)
            })
            .collect();
        let mut mixed = vec![0.0; self.dim()];
        self.w2.matvec(&hidden, &mut mixed);
        for ((m, b), x) in mixed.iter_mut().zip(&self.b2).zip(u0) {
            *m = r * (*m + b) + (1.0 - r) * x;
        }
        let norm = dot(&mixed, &mixed).sqrt();
        if !(norm >= MIN_OUTPUT_NORM) {
            return Err(Error::DegenerateOutput);
        }
        mixed.iter_mut().for_each(|m| *m /= norm);
        Ok(ForwardCache {
            pre_act,
            hidden,
            norm,
            output: mixed,
        })
    }

    /// Accumulates parameter gradients given `∂L/∂u_f` for one input.
    pub fn backward(&self, u0: &[f64], cache: &ForwardCache, grad_out: &[f64], grads: &mut AdapterGrads) {
        let out = &cache.output;
        // through u_f = mixed / ‖mixed‖
        let radial = dot(out, grad_out);
        let r = self.residual_ratio;
        let g_raw: Vec<f64> = grad_out
            .iter()
            .zip(out)
            .map(|(g, o)| r * (g - o * radial) / cache.norm)
            .collect();
        for (gb, g) in grads.b2.iter_mut().zip(&g_raw) {
            *gb += g;
        }
        grads.w2.add_outer(1.0, &g_raw, &cache.hidden);
        let mut g_hidden = vec![0.0; self.hidden()];
        self.w2.matvec_t_add(&g_raw, &mut g_hidden);
        for (g, z) in g_hidden.iter_mut().zip(&cache.pre_act) {
            if *z <= 0.0 {
                *g = 0.0;
            }
        }
        for (gb, g) in grads.b1.iter_mut().zip(&g_hidden) {
            *gb += g;
        }
        grads.w1.add_outer(1.0, &g_hidden, u0);
    }
}

pub fn param_count(dim: usize, hidden: usize) -> usize {
    2 * dim * hidden + hidden + dim
}
