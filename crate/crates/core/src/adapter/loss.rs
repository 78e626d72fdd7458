//! Mean cross-entropy over the interpolated logits of a variant, and its
//! exact gradient with respect to every adapter tensor.
//!
//! When the support head retrieves with `u_f`, keys are recomputed through
//! the current adapter, so gradients flow through both the query path and
//! every key path.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::predictor::{combine, support_head_from_cosines, Head, Layout, PredictorConfig, Repr};
use crate::support::SupportSet;

use super::{AdapterGrads, AdapterParams, ForwardCache};

/// One training example.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub u0: &'a [f64],
    pub label: usize,
    /// Support row left out of this query's retrieval (the query itself when
    /// training on support records).
    pub exclude_key: Option<usize>,
}

struct Setup<'a> {
    layout: Layout,
    cfg: &'a PredictorConfig,
    weights: &'a Matrix,
    support: Option<&'a SupportSet>,
    /// Adapter forward caches for every support row, when a head retrieves
    /// with `u_f`.
    key_caches: Option<Vec<ForwardCache>>,
}

fn setup<'a>(
    params: &AdapterParams,
    queries: &[Query<'_>],
    cfg: &'a PredictorConfig,
    support: Option<&'a SupportSet>,
    weights: &'a Matrix,
) -> Result<Setup<'a>> {
    if queries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    cfg.validate()?;
    let layout = cfg.variant.layout();
    let dim = weights.cols();
    if params.dim() != dim {
        return Err(Error::DimMismatch {
            context: "adapter vs class weights",
            expected: dim,
            found: params.dim(),
        });
    }
    for q in queries {
        if q.u0.len() != dim {
            return Err(Error::DimMismatch {
                context: "training query",
                expected: dim,
                found: q.u0.len(),
            });
        }
        if q.label >= weights.rows() {
            return Err(Error::LabelOutOfRange {
                record: "training query".into(),
                label: q.label as u32,
                num_classes: weights.rows(),
            });
        }
    }
    if layout.uses_support() {
        let s = support.ok_or(Error::MissingSupport {
            variant: cfg.variant.as_str(),
        })?;
        if s.dim() != dim {
            return Err(Error::DimMismatch {
                context: "support keys vs class weights",
                expected: dim,
                found: s.dim(),
            });
        }
    }
    let key_caches = if layout.heads().any(|h| h == Head::Support(Repr::Adapted)) {
        let s = support.expect("checked above");
        let caches = s
            .keys()
            .iter_rows()
            .map(|k| params.forward_cached(k))
            .collect::<Result<Vec<_>>>()?;
        Some(caches)
    } else {
        None
    };
    Ok(Setup {
        layout,
        cfg,
        weights,
        support,
        key_caches,
    })
}

impl Setup<'_> {
    fn key(&self, repr: Repr, i: usize) -> &[f64] {
        match repr {
            Repr::Raw => self.support.unwrap().keys().row(i),
            Repr::Adapted => &self.key_caches.as_ref().unwrap()[i].output,
        }
    }

    fn cosines<'q>(&'q self, repr: Repr, q: &'q [f64], exclude: Option<usize>) -> impl Iterator<Item = (usize, f64)> + 'q {
        let s = self.support.unwrap();
        (0..s.len())
            .filter(move |&i| Some(i) != exclude)
            .map(move |i| (i, dot(q, self.key(repr, i))))
    }

    fn head(&self, head: Head, raw: &[f64], adapted: Option<&[f64]>, exclude: Option<usize>) -> Vec<f64> {
        let pick = |r: Repr| match r {
            Repr::Raw => raw,
            Repr::Adapted => adapted.expect("adapted embedding computed"),
        };
        let scale = self.cfg.scale;
        match head {
            Head::Clap(r) => {
                let q = pick(r);
                self.weights.iter_rows().map(|w| scale * dot(q, w)).collect()
            }
            Head::Support(r) => {
                let s = self.support.unwrap();
                support_head_from_cosines(
                    self.cosines(r, pick(r), exclude),
                    s.labels(),
                    s.class_counts(),
                    self.cfg.beta,
                    scale,
                )
            }
        }
    }

    fn logits(&self, raw: &[f64], adapted: Option<&[f64]>, exclude: Option<usize>) -> Vec<f64> {
        let first = self.layout.first.map(|h| self.head(h, raw, adapted, exclude));
        let second = self.layout.second.map(|h| self.head(h, raw, adapted, exclude));
        let mut z = vec![0.0; self.weights.rows()];
        combine(self.cfg.alpha, first.as_deref(), second.as_deref(), &mut z);
        z
    }
}

/// Returns `(softmax(z), logsumexp(z))`.
fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    let lse = m + sum.ln();
    (e.into_iter().map(|x| x / sum).collect(), lse)
}

/// Mean cross-entropy of `softmax(final logits)` over the batch.
pub fn adapter_loss(
    params: &AdapterParams,
    queries: &[Query<'_>],
    cfg: &PredictorConfig,
    support: Option<&SupportSet>,
    class_weights: &Matrix,
) -> Result<f64> {
    let st = setup(params, queries, cfg, support, class_weights)?;
    let mut total = 0.0;
    for q in queries {
        let adapted = if st.layout.uses_adapter() {
            Some(params.forward(q.u0)?)
        } else {
            None
        };
        let z = st.logits(q.u0, adapted.as_deref(), q.exclude_key);
        let (_, lse) = softmax(&z);
        total += lse - z[q.label];
    }
    Ok(total / queries.len() as f64)
}

/// Loss and exact gradients of [`adapter_loss`] with respect to every
/// adapter tensor.
pub fn adapter_backward(
    params: &AdapterParams,
    queries: &[Query<'_>],
    cfg: &PredictorConfig,
    support: Option<&SupportSet>,
    class_weights: &Matrix,
) -> Result<(f64, AdapterGrads)> {
    let st = setup(params, queries, cfg, support, class_weights)?;
    let mut grads = AdapterGrads::zeros_like(params);
    let mut key_grads = st
        .key_caches
        .as_ref()
        .map(|c| Matrix::zeros(c.len(), params.dim()));
    let batch = queries.len() as f64;
    let scale = cfg.scale;
    let mut total = 0.0;

    for q in queries {
        let cache = if st.layout.uses_adapter() {
            Some(params.forward_cached(q.u0)?)
        } else {
            None
        };
        let adapted = cache.as_ref().map(|c| c.output.as_slice());
        let z = st.logits(q.u0, adapted, q.exclude_key);
        let (p, lse) = softmax(&z);
        total += lse - z[q.label];

        let mut g_z = p;
        g_z[q.label] -= 1.0;
        g_z.iter_mut().for_each(|g| *g /= batch);

        // only gradients reaching u_f matter; u0 is frozen input
        let mut g_adapted = vec![0.0; params.dim()];
        let coeffs = [(st.layout.first, 1.0 - cfg.alpha), (st.layout.second, cfg.alpha)];
        for (head, coef) in coeffs {
            match head {
                Some(Head::Clap(Repr::Adapted)) => {
                    st.weights.matvec_t_add(
                        &g_z.iter().map(|g| coef * scale * g).collect::<Vec<_>>(),
                        &mut g_adapted,
                    );
                }
                Some(Head::Support(Repr::Adapted)) => {
                    let s = st.support.unwrap();
                    let uf = adapted.unwrap();
                    let kg = key_grads.as_mut().unwrap();
                    for (i, cos) in st.cosines(Repr::Adapted, uf, q.exclude_key) {
                        let label = s.labels()[i];
                        let a = (-cfg.beta * (1.0 - cos)).exp();
                        let t = coef * scale / s.class_counts()[label] as f64 * g_z[label] * a * cfg.beta;
                        if t == 0.0 {
                            continue;
                        }
                        let key = st.key(Repr::Adapted, i);
                        for (g, k) in g_adapted.iter_mut().zip(key) {
                            *g += t * k;
                        }
                        for (g, u) in kg.row_mut(i).iter_mut().zip(uf) {
                            *g += t * u;
                        }
                    }
                }
                _ => {}
            }
        }
        if let Some(c) = &cache {
            params.backward(q.u0, c, &g_adapted, &mut grads);
        }
    }

    if let (Some(kg), Some(caches)) = (&key_grads, &st.key_caches) {
        let s = st.support.unwrap();
        for (i, c) in caches.iter().enumerate() {
            let g = kg.row(i);
            if g.iter().any(|&x| x != 0.0) {
                params.backward(s.keys().row(i), c, g, &mut grads);
            }
        }
    }
    Ok((total / batch, grads))
}
