#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use support_adapt::linalg::Matrix;
use support_adapt::{ClassWeights, EmbeddingDataset, Record, Split, SupportSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector rounded through f32 and renormalized, so it survives the
/// f32 storage of datasets and class weights exactly.
pub fn unit_f32(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = unit(rng, dim).iter().map(|&x| x as f32).collect();
    let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    v.iter().map(|&x| (x as f64 / n) as f32).collect()
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("c{j}")).collect()
}

pub fn random_weights(rng: &mut impl Rng, n: usize, dim: usize) -> ClassWeights {
    let rows = (0..n).map(|_| unit_f32(rng, dim)).collect();
    ClassWeights::new(dim, class_names(n), rows, "[class]").unwrap()
}

/// `k` random unit keys per class, class-major.
pub fn random_support(rng: &mut impl Rng, n: usize, k: usize, dim: usize) -> SupportSet {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for j in 0..n {
        for _ in 0..k {
            rows.push(unit(rng, dim));
            labels.push(j);
        }
    }
    let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
    SupportSet::from_parts(Matrix::from_rows(dim, &rows).unwrap(), labels, ids, n).unwrap()
}

/// Well separated clusters: class `j` sits around a random unit centre
/// with per-coordinate noise `spread`.
pub struct Clusters {
    pub centres: Vec<Vec<f64>>,
    pub data: EmbeddingDataset,
}

pub fn clusters(seed: u64, n: usize, dim: usize, per_split: [usize; 3], spread: f64) -> Clusters {
    let mut r = rng(seed);
    let centres: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, dim)).collect();
    let mut records = Vec::new();
    for (split, &count) in Split::ALL.iter().zip(&per_split) {
        for (j, c) in centres.iter().enumerate() {
            for i in 0..count {
                let v: Vec<f64> = c
                    .iter()
                    .map(|x| x + spread * r.sample::<f64, _>(StandardNormal))
                    .collect();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                records.push(Record {
                    id: format!("{split}-{j}-{i}"),
                    split: *split,
                    label: j,
                    vector: v.iter().map(|x| (x / nv) as f32).collect(),
                });
            }
        }
    }
    Clusters {
        centres,
        data: EmbeddingDataset::new(dim, class_names(n), records).unwrap(),
    }
}

/// `Σ exp(-β(1 - ⟨u, k_i⟩))` into each key's class, by explicit loops.
pub fn support_oracle(u: &[f64], keys: &[Vec<f64>], labels: &[usize], n: usize, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, key) in keys.iter().enumerate() {
        let mut cos = 0.0;
        for d in 0..u.len() {
            cos += u[d] * key[d];
        }
        for (j, o) in out.iter_mut().enumerate() {
            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
            *o += (-beta * (1.0 - cos)).exp() * onehot;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

/// Random adapter-variant instance for gradient checks: C=6, H=3, N=2, K=1
/// by default, with non-zero biases so every ReLU path is exercised.
pub struct GradInstance {
    pub params: support_adapt::AdapterParams,
    pub support: SupportSet,
    pub weights: Matrix,
    pub extra: Vec<(Vec<f64>, usize)>,
    pub cfg: support_adapt::PredictorConfig,
}

pub fn grad_instance(seed: u64, variant: support_adapt::Variant, c: usize, h: usize, n: usize, k: usize) -> GradInstance {
    let mut r = rng(seed);
    let mut params = support_adapt::AdapterParams::init(c, h, 0.2 + 0.6 * r.random::<f64>(), seed).unwrap();
    params.b1.iter_mut().for_each(|b| *b = 0.3 * r.random_range(-1.0..1.0));
    params.b2.iter_mut().for_each(|b| *b = 0.3 * r.random_range(-1.0..1.0));
    let support = random_support(&mut r, n, k, c);
    let w: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, c)).collect();
    let extra = (0..3).map(|i| (unit(&mut r, c), i % n)).collect();
    let mut cfg = support_adapt::PredictorConfig::new(variant)
        .with_beta(r.random_range(1.0..8.0))
        .with_scale(r.random_range(5.0..30.0));
    if variant.layout().forced_alpha.is_none() {
        cfg = cfg.with_alpha(r.random_range(0.1..0.9));
    }
    GradInstance {
        params,
        support,
        weights: Matrix::from_rows(c, &w).unwrap(),
        extra,
        cfg,
    }
}

impl GradInstance {
    pub fn queries(&self) -> Vec<support_adapt::Query<'_>> {
        let mut q: Vec<support_adapt::Query<'_>> = (0..self.support.len())
            .map(|i| support_adapt::Query {
                u0: self.support.keys().row(i),
                label: self.support.labels()[i],
                exclude_key: Some(i),
            })
            .collect();
        q.extend(self.extra.iter().map(|(u, l)| support_adapt::Query {
            u0: u,
            label: *l,
            exclude_key: None,
        }));
        q
    }

    fn loss(&self, p: &support_adapt::AdapterParams) -> f64 {
        support_adapt::adapter_loss(p, &self.queries(), &self.cfg, Some(&self.support), &self.weights).unwrap()
    }

    /// Relative error `‖fd - analytic‖ / max(‖fd‖, ‖analytic‖)` per tensor,
    /// with central differences of step `eps`.
    pub fn relative_errors(&self, eps: f64) -> [f64; 4] {
        let (_, grads) = support_adapt::adapter_backward(
            &self.params,
            &self.queries(),
            &self.cfg,
            Some(&self.support),
            &self.weights,
        )
        .unwrap();
        let analytic = grads.tensors();
        let mut out = [0.0; 4];
        for t in 0..4 {
            let len = self.params.tensors()[t].len();
            let mut fd = vec![0.0; len];
            for i in 0..len {
                let mut plus = self.params.clone();
                plus.tensors_mut()[t][i] += eps;
                let mut minus = self.params.clone();
                minus.tensors_mut()[t][i] -= eps;
                fd[i] = (self.loss(&plus) - self.loss(&minus)) / (2.0 * eps);
            }
            let diff: f64 = fd.iter().zip(analytic[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let na = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = analytic[t].iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = na.max(nb);
            out[t] = if denom < 1e-12 { diff } else { diff / denom };
        }
        out
    }
}
