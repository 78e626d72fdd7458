//! Experiment orchestration: k-shot sweeps over seeds, joint vs independent
//! adapter training, timing, and result tables.

mod experiment;
mod joint;
mod report;
pub mod synthetic;
mod timing;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adapter::TrainConfig;
use crate::clap_head::DEFAULT_SCALE;
use crate::error::{Error, Result};
use crate::predictor::{Variant, DEFAULT_ALPHA, DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID};
use crate::store::{load_class_weights, load_dataset, ClassWeights, EmbeddingDataset};
use crate::support::DEFAULT_BETA;

pub use experiment::{run_experiment, run_experiment_with, run_loaded, run_loaded_with};
pub use joint::{run_joint_vs_independent, run_joint_vs_independent_with, TrainingMode};
pub use report::{population_std, ResultRow, ResultTable, RunRecord, CSV_HEADER};
pub use synthetic::{make_shift_benchmark, make_shift_domains};
pub use timing::{time_variant, Timing, TIMING_REPETITIONS};

pub const DEFAULT_SHOTS: [Shots; 6] = [
    Shots::K(2),
    Shots::K(4),
    Shots::K(8),
    Shots::K(16),
    Shots::K(24),
    Shots::Full,
];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Shots per class: a fixed K, or every train record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shots {
    K(usize),
    Full,
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::K(k) => write!(f, "{k}"),
            Shots::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Shots::Full);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Shots::K(k)),
            _ => Err(Error::InvalidParameter(format!(
                "shots must be a positive integer or \"full\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::K(k) => s.serialize_u64(*k as u64),
            Shots::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(usize),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(k) if k > 0 => Ok(Shots::K(k)),
            Repr::Int(_) => Err(serde::de::Error::custom("shots must be positive")),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A dataset file and the class-weight file to score it with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Label used in result tables; defaults to the dataset file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub path: PathBuf,
    pub weights: PathBuf,
}

impl DatasetEntry {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.path.display().to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub datasets: Vec<DatasetEntry>,
    pub variants: Vec<Variant>,
    pub shots: Vec<Shots>,
    pub seeds: Vec<u64>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    /// α and β used while training adapters (the grid search picks the
    /// evaluation values afterwards).
    pub alpha: f64,
    pub beta: f64,
    pub scale: f64,
    pub train: TrainConfig,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            variants: Variant::ALL.to_vec(),
            shots: DEFAULT_SHOTS.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            scale: DEFAULT_SCALE,
            train: TrainConfig::default(),
            output: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("config {}: {e}", path.display())))
    }

    /// Checks everything except the dataset list.
    pub fn validate_plan(&self) -> Result<()> {
        if self.variants.is_empty() || self.shots.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParameter(
                "variants, shots and seeds must be non-empty".into(),
            ));
        }
        if self.alpha_grid.is_empty() || self.beta_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        self.train.validate()
    }

    pub fn load_datasets(&self) -> Result<Vec<LoadedDataset>> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidParameter("no datasets given".into()));
        }
        self.datasets
            .iter()
            .map(|e| {
                LoadedDataset::new(
                    e.display_name(),
                    load_dataset(&e.path)?,
                    load_class_weights(&e.weights)?,
                )
            })
            .collect()
    }
}

/// A dataset normalized and paired with compatible class weights.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub data: EmbeddingDataset,
    pub weights: ClassWeights,
}

impl LoadedDataset {
    pub fn new(name: impl Into<String>, data: EmbeddingDataset, weights: ClassWeights) -> Result<Self> {
        weights.check_compatible(&data)?;
        if weights.class_names() != data.class_names() {
            return Err(Error::LabelSpaceMismatch(format!(
                "class weights {:?} vs dataset {:?}",
                weights.class_names(),
                data.class_names()
            )));
        }
        Ok(Self {
            name: name.into(),
            data: data.normalize()?,
            weights,
        })
    }
}

/// Trainable parameter count for a variant: the adapter's `2·C·H + H + C`,
/// or 0 for training-free variants.
pub fn trainable_params(variant: Variant, dim: usize, hidden: usize) -> usize {
    if variant.needs_adapter() {
        crate::adapter::param_count(dim, hidden)
    } else {
        0
    }
}
