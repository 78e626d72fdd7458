//! Frozen zero-shot head: scaled cosine similarity against text-derived class
//! weights.

use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, Matrix};
use crate::parallel::Execution;
use crate::store::{ClassWeights, EmbeddingDataset};

/// Contrastive-pretraining logit multiplier.
pub const DEFAULT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    pub scores: Vec<f64>,
    pub scale: f64,
}

impl LogitVector {
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Class weights widened to f64 with a fixed logit scale.
#[derive(Debug, Clone)]
pub struct ClapHead {
    weights: Matrix,
    scale: f64,
}

impl ClapHead {
    pub fn new(weights: &ClassWeights, scale: f64) -> Result<Self> {
        Self::from_matrix(weights.matrix(), scale)
    }

    pub fn from_matrix(weights: Matrix, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "logit scale must be positive, got {scale}"
            )));
        }
        Ok(Self { weights, scale })
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn logits(&self, u: &[f64]) -> Result<LogitVector> {
        if u.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "query vs class weights",
                expected: self.dim(),
                found: u.len(),
            });
        }
        let scores = self
            .weights
            .iter_rows()
            .map(|w| self.scale * dot(u, w))
            .collect();
        Ok(LogitVector {
            scores,
            scale: self.scale,
        })
    }
}

/// `scores[j] = scale · ⟨u, w_j⟩`.
pub fn clap_logits(u: &[f64], weights: &ClassWeights, scale: f64) -> Result<LogitVector> {
    ClapHead::new(weights, scale)?.logits(u)
}

pub(crate) fn check_nonempty(ds: &EmbeddingDataset, split: &'static str) -> Result<()> {
    if ds.is_empty() {
        Err(Error::EmptySplit { split })
    } else {
        Ok(())
    }
}

/// Fraction of `ds` records whose argmax zero-shot logit equals the label.
pub fn zero_shot_predict(ds: &EmbeddingDataset, weights: &ClassWeights, scale: f64) -> Result<f64> {
    zero_shot_predict_with(Execution::default(), ds, weights, scale)
}

pub fn zero_shot_predict_with(
    exec: Execution,
    ds: &EmbeddingDataset,
    weights: &ClassWeights,
    scale: f64,
) -> Result<f64> {
    weights.check_compatible(ds)?;
    check_nonempty(ds, "evaluation")?;
    let head = ClapHead::new(weights, scale)?;
    let queries = ds.matrix();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let hits = exec.try_map(&idx, |&i| {
        head.logits(queries.row(i))
            .map(|l| (l.argmax() == ds.records()[i].label) as usize)
    })?;
    Ok(hits.iter().sum::<usize>() as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Record, Split};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(rows: Vec<Vec<f32>>) -> ClassWeights {
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        ClassWeights::new(rows[0].len(), names, rows, "[class]").unwrap()
    }

    fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = crate::linalg::norm(&v);
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn self_similarity_is_max() {
        let w = weights(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.6, 0.8],
            vec![0.0, 1.0, 0.0],
        ]);
        let l = clap_logits(&[0.0, 0.6, 0.8], &w, 1.0).unwrap();
        assert!((l.scores[1] - 1.0).abs() < 1e-7);
        assert_eq!(l.argmax(), 1);
    }

    #[test]
    fn orthogonal_query_gives_zero_scores() {
        let w = weights(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let l = clap_logits(&[0.0, 0.0, 1.0], &w, 100.0).unwrap();
        assert_eq!(l.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f32>> = (0..3)
            .map(|_| unit(&mut rng, 5).into_iter().map(|x| x as f32).collect())
            .collect();
        // f32 rounding can push a row off unit norm by ~1e-8, well inside tolerance
        let w = weights(rows.clone());
        let u = unit(&mut rng, 5);
        let scale = 3.5;
        let l = clap_logits(&u, &w, scale).unwrap();
        for j in 0..3 {
            let mut acc = 0.0f64;
            for c in 0..5 {
                acc += u[c] * rows[j][c] as f64;
            }
            assert!((l.scores[j] - scale * acc).abs() < 1e-6);
        }
    }

    #[test]
    fn dim_mismatch() {
        let w = weights(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            clap_logits(&[1.0, 0.0, 0.0], &w, 1.0),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn single_matching_record_is_perfect() {
        let w = weights(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let ds = EmbeddingDataset::new(
            2,
            w.class_names().to_vec(),
            vec![Record {
                id: "q".into(),
                split: Split::Test,
                label: 0,
                vector: vec![1.0, 0.0],
            }],
        )
        .unwrap();
        assert_eq!(zero_shot_predict(&ds, &w, DEFAULT_SCALE).unwrap(), 1.0);
    }

    #[test]
    fn rejects_non_positive_scale() {
        let w = weights(vec![vec![1.0, 0.0]]);
        assert!(ClapHead::new(&w, 0.0).is_err());
    }
}
