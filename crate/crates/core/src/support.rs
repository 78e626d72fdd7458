//! K-shot key-value support set and the exponential-affinity retrieval head.
//!
//! Keys are unit-norm embeddings of the sampled training records, values are
//! their one-hot labels. For a query `u` the head scores class `j` as
//! `Σ_i exp(-β(1 - ⟨u, key_i⟩)) · value_i[j]`, unnormalized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clap_head::{check_nonempty, LogitVector};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::parallel::Execution;
use crate::store::EmbeddingDataset;

pub const DEFAULT_BETA: f64 = 5.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    keys: Matrix,
    labels: Vec<usize>,
    ids: Vec<String>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl SupportSet {
    /// Builds a support set from explicit rows in any order.
    pub fn from_parts(
        keys: Matrix,
        labels: Vec<usize>,
        ids: Vec<String>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != keys.rows() || ids.len() != keys.rows() {
            return Err(Error::DimMismatch {
                context: "support keys vs labels",
                expected: keys.rows(),
                found: labels.len(),
            });
        }
        let mut class_counts = vec![0; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    record: String::from("support row"),
                    label: l as u32,
                    num_classes,
                });
            }
            class_counts[l] += 1;
        }
        Ok(Self {
            keys,
            labels,
            ids,
            num_classes,
            class_counts,
        })
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.keys.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-class row counts (the column sums of the value matrix).
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Shots per class when balanced; `None` for an unbalanced full-shot set.
    pub fn shots(&self) -> Option<usize> {
        let k = *self.class_counts.first()?;
        self.class_counts.iter().all(|&c| c == k).then_some(k)
    }

    pub fn is_balanced(&self) -> bool {
        self.shots().is_some()
    }

    /// One-hot value matrix, one row per key.
    pub fn values(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.num_classes);
        for (i, &l) in self.labels.iter().enumerate() {
            m.row_mut(i)[l] = 1.0;
        }
        m
    }

    /// Same labels, keys replaced (used for adapter-transformed keys).
    pub fn with_keys(&self, keys: Matrix) -> Result<Self> {
        if keys.rows() != self.len() {
            return Err(Error::DimMismatch {
                context: "replacement support keys",
                expected: self.len(),
                found: keys.rows(),
            });
        }
        Ok(Self {
            keys,
            ..self.clone()
        })
    }

    /// Merges support sets over the same label space, keeping class-major order.
    pub fn concat(parts: &[&SupportSet]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let dim = first.dim();
        let n = first.num_classes;
        let mut rows: Vec<(usize, &[f64], &str)> = Vec::new();
        for p in parts {
            if p.num_classes != n {
                return Err(Error::LabelSpaceMismatch(format!(
                    "{} vs {} classes",
                    n, p.num_classes
                )));
            }
            if p.dim() != dim {
                return Err(Error::DimMismatch {
                    context: "support key width",
                    expected: dim,
                    found: p.dim(),
                });
            }
            for i in 0..p.len() {
                rows.push((p.labels[i], p.keys.row(i), &p.ids[i]));
            }
        }
        // stable: preserves part order within a class
        rows.sort_by_key(|r| r.0);
        let keys = Matrix::from_rows(dim, &rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
        let labels = rows.iter().map(|r| r.0).collect();
        let ids = rows.iter().map(|r| r.2.to_owned()).collect();
        SupportSet::from_parts(keys, labels, ids, n)
    }

    /// Affinity `exp(-β(1 - ⟨u, key_i⟩))` accumulated per class, skipping
    /// row `exclude` if given.
    pub(crate) fn scores_excluding(&self, u: &[f64], beta: f64, exclude: Option<usize>) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_classes];
        for (i, key) in self.keys.iter_rows().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            scores[self.labels[i]] += (-beta * (1.0 - dot(u, key))).exp();
        }
        scores
    }

    pub(crate) fn check_query(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "query vs support keys",
                expected: self.dim(),
                found: u.len(),
            });
        }
        Ok(())
    }
}

/// Samples exactly `k` train records per class without replacement.
///
/// Rows come out class-major, each class in sampled order. The same
/// `(ds, k, seed)` always yields the same rows.
pub fn build_support(ds: &EmbeddingDataset, k: usize, seed: u64) -> Result<SupportSet> {
    if k == 0 {
        return Err(Error::InvalidParameter("shots must be positive".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, r) in ds.records().iter().enumerate() {
        by_class[r.label].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::InsufficientShots {
                class,
                available: members.len(),
                requested: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k * ds.num_classes());
    for members in &by_class {
        let picks = rand::seq::index::sample(&mut rng, members.len(), k);
        chosen.extend(picks.iter().map(|p| members[p]));
    }
    from_records(ds, &chosen)
}

/// Every train record: `build_support` with `k` = the per-class count when
/// the classes are balanced, otherwise all records in class-major order.
pub fn build_full_support(ds: &EmbeddingDataset, seed: u64) -> Result<SupportSet> {
    let counts = ds.class_counts();
    let min = counts.iter().copied().min().unwrap_or(0);
    if min == 0 {
        let class = counts.iter().position(|&c| c == 0).unwrap_or(0);
        return Err(Error::InsufficientShots {
            class,
            available: 0,
            requested: 1,
        });
    }
    if counts.iter().all(|&c| c == min) {
        return build_support(ds, min, seed);
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| ds.records()[i].label);
    from_records(ds, &order)
}

fn from_records(ds: &EmbeddingDataset, indices: &[usize]) -> Result<SupportSet> {
    let mut keys = Matrix::zeros(indices.len(), ds.dim());
    let mut labels = Vec::with_capacity(indices.len());
    let mut ids = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let r = &ds.records()[i];
        for (o, &x) in keys.row_mut(row).iter_mut().zip(&r.vector) {
            *o = x as f64;
        }
        labels.push(r.label);
        ids.push(r.id.clone());
    }
    SupportSet::from_parts(keys, labels, ids, ds.num_classes())
}

/// `scores[j] = Σ_i exp(-β(1 - ⟨u, key_i⟩)) · values[i][j]`.
pub fn support_logits(u: &[f64], s: &SupportSet, beta: f64) -> Result<LogitVector> {
    s.check_query(u)?;
    Ok(LogitVector {
        scores: s.scores_excluding(u, beta, None),
        scale: 1.0,
    })
}

pub fn support_predict(ds: &EmbeddingDataset, s: &SupportSet, beta: f64) -> Result<f64> {
    support_predict_with(Execution::default(), ds, s, beta)
}

pub fn support_predict_with(
    exec: Execution,
    ds: &EmbeddingDataset,
    s: &SupportSet,
    beta: f64,
) -> Result<f64> {
    if ds.num_classes() != s.num_classes() {
        return Err(Error::DimMismatch {
            context: "dataset vs support classes",
            expected: s.num_classes(),
            found: ds.num_classes(),
        });
    }
    check_nonempty(ds, "evaluation")?;
    let queries = ds.matrix();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let hits = exec.try_map(&idx, |&i| {
        support_logits(queries.row(i), s, beta).map(|l| (l.argmax() == ds.records()[i].label) as usize)
    })?;
    Ok(hits.iter().sum::<usize>() as f64 / ds.len() as f64)
}
