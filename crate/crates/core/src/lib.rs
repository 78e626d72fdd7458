//! Few-shot classification in a frozen embedding space.
//!
//! A zero-shot head scores a query against text-derived class weights, a
//! key-value support set retrieves over K labeled examples per class, and a
//! small residual MLP adapter can re-align embeddings to the task. The
//! [`predictor`] interpolates the two heads, and [`harness`] runs k-shot
//! sweeps, ablations and synthetic domain-shift benchmarks on top.

pub mod adapter;
pub mod clap_head;
mod container;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod parallel;
pub mod predictor;
pub mod store;
pub mod support;

pub use adapter::{
    adapter_backward, adapter_loss, load_adapter, save_adapter, train_adapter, AdapterGrads,
    AdapterParams, Query, TrainConfig, TrainedAdapter,
};
pub use clap_head::{clap_logits, zero_shot_predict, ClapHead, LogitVector};
pub use error::{Error, Result};
pub use parallel::Execution;
pub use predictor::{final_logits, grid_search, GridResult, Predictor, PredictorConfig, Variant};
pub use store::{
    load_class_weights, load_dataset, save_class_weights, save_dataset, ClassWeights,
    EmbeddingDataset, Record, Split,
};
pub use support::{build_full_support, build_support, support_logits, support_predict, SupportSet};
