//! Interpolated prediction `(1-α)·first + α·second` over the variant table.
//!
//! Each variant picks which heads it combines and whether each head sees the
//! raw embedding `u0` or the adapter output `u_f`:
//!
//! | variant           | first head  | second head     |
//! |-------------------|-------------|-----------------|
//! | `zs-clap`         | clap(u0)    | -  (α = 0)      |
//! | `clap-s`          | -           | support(u0) (α = 1) |
//! | `tip-adapter`     | clap(u0)    | support(u0)     |
//! | `tip-adapter-f`   | clap(u0)    | support(u_f)    |
//! | `adapter`         | clap(u_f)   | -  (α = 0)      |
//! | `adapter-zs`      | clap(u_f)   | clap(u0)        |
//! | `adapter-support` | clap(u_f)   | support(u0)     |
//! | `clap-s-plus`     | clap(u_f)   | support(u_f)    |
//!
//! `support(u_f)` always retrieves against adapter-transformed keys.
//!
//! Heads are combined as raw logits. The clap head is `scale·⟨u, w_j⟩`; the
//! support head is `scale / n_j · Σ_i exp(-β(1 - ⟨u, key_i⟩))` over the
//! `n_j` keys of class `j`, which puts both on `[-scale, scale]`. Dividing by
//! a positive per-class constant leaves the raw support argmax unchanged on
//! balanced support sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterParams;
use crate::clap_head::{check_nonempty, LogitVector, DEFAULT_SCALE};
use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, Matrix};
use crate::parallel::Execution;
use crate::store::{ClassWeights, EmbeddingDataset};
use crate::support::{SupportSet, DEFAULT_BETA};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_ALPHA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_BETA_GRID: [f64; 5] = [1.0, 2.5, 5.5, 7.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "zs-clap")]
    ZsClap,
    #[serde(rename = "clap-s")]
    ClapS,
    #[serde(rename = "tip-adapter")]
    TipAdapter,
    #[serde(rename = "tip-adapter-f")]
    TipAdapterF,
    #[serde(rename = "adapter")]
    AdapterOnly,
    #[serde(rename = "adapter-zs")]
    AdapterPlusZs,
    #[serde(rename = "adapter-support")]
    AdapterPlusSupport,
    #[serde(rename = "clap-s-plus")]
    ClapSPlus,
}

/// Which embedding feeds a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repr {
    /// Raw encoder output `u0`.
    Raw,
    /// Adapter output `u_f`.
    Adapted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Clap(Repr),
    Support(Repr),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    /// Weighted by `1 - α`.
    pub first: Option<Head>,
    /// Weighted by `α`.
    pub second: Option<Head>,
    pub forced_alpha: Option<f64>,
}

impl Layout {
    pub fn heads(&self) -> impl Iterator<Item = Head> {
        self.first.into_iter().chain(self.second)
    }

    pub fn uses_adapter(&self) -> bool {
        self.heads()
            .any(|h| matches!(h, Head::Clap(Repr::Adapted) | Head::Support(Repr::Adapted)))
    }

    pub fn uses_support(&self) -> bool {
        self.heads().any(|h| matches!(h, Head::Support(_)))
    }
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::ZsClap,
        Variant::ClapS,
        Variant::TipAdapter,
        Variant::TipAdapterF,
        Variant::AdapterOnly,
        Variant::AdapterPlusZs,
        Variant::AdapterPlusSupport,
        Variant::ClapSPlus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ZsClap => "zs-clap",
            Variant::ClapS => "clap-s",
            Variant::TipAdapter => "tip-adapter",
            Variant::TipAdapterF => "tip-adapter-f",
            Variant::AdapterOnly => "adapter",
            Variant::AdapterPlusZs => "adapter-zs",
            Variant::AdapterPlusSupport => "adapter-support",
            Variant::ClapSPlus => "clap-s-plus",
        }
    }

    pub fn layout(self) -> Layout {
        use Head::*;
        use Repr::*;
        let (first, second, forced_alpha) = match self {
            Variant::ZsClap => (Some(Clap(Raw)), None, Some(0.0)),
            Variant::ClapS => (None, Some(Support(Raw)), Some(1.0)),
            Variant::TipAdapter => (Some(Clap(Raw)), Some(Support(Raw)), None),
            Variant::TipAdapterF => (Some(Clap(Raw)), Some(Support(Adapted)), None),
            Variant::AdapterOnly => (Some(Clap(Adapted)), None, Some(0.0)),
            Variant::AdapterPlusZs => (Some(Clap(Adapted)), Some(Clap(Raw)), None),
            Variant::AdapterPlusSupport => (Some(Clap(Adapted)), Some(Support(Raw)), None),
            Variant::ClapSPlus => (Some(Clap(Adapted)), Some(Support(Adapted)), None),
        };
        Layout {
            first,
            second,
            forced_alpha,
        }
    }

    pub fn needs_adapter(self) -> bool {
        self.layout().uses_adapter()
    }

    pub fn needs_support(self) -> bool {
        self.layout().uses_support()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::InvalidParameter(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub scale: f64,
}

impl PredictorConfig {
    /// Defaults, with α pinned for variants that force it.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            alpha: variant.layout().forced_alpha.unwrap_or(DEFAULT_ALPHA),
            beta: DEFAULT_BETA,
            scale: DEFAULT_SCALE,
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn with_scale(self, scale: f64) -> Self {
        Self { scale, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Some(forced) = self.variant.layout().forced_alpha {
            if self.alpha != forced {
                return Err(Error::VariantConstraintViolated {
                    variant: self.variant.as_str(),
                    forced,
                    alpha: self.alpha,
                });
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// `(1-α)·first + α·second`, with an absent head contributing nothing.
#[inline]
pub(crate) fn combine(alpha: f64, first: Option<&[f64]>, second: Option<&[f64]>, out: &mut [f64]) {
    match (first, second) {
        (Some(a), Some(b)) => {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o = (1.0 - alpha) * x + alpha * y;
            }
        }
        (Some(a), None) => {
            for (o, x) in out.iter_mut().zip(a) {
                *o = (1.0 - alpha) * x;
            }
        }
        (None, Some(b)) => {
            for (o, y) in out.iter_mut().zip(b) {
                *o = alpha * y;
            }
        }
        (None, None) => out.iter_mut().for_each(|o| *o = 0.0),
    }
}

/// Support head as it enters the interpolation: class sums divided by the
/// class's key count, times `scale`.
pub(crate) fn support_head_from_cosines(
    cosines: impl Iterator<Item = (usize, f64)>,
    labels: &[usize],
    class_counts: &[usize],
    beta: f64,
    scale: f64,
) -> Vec<f64> {
    let mut s = vec![0.0; class_counts.len()];
    for (i, c) in cosines {
        s[labels[i]] += (-beta * (1.0 - c)).exp();
    }
    for (x, &n) in s.iter_mut().zip(class_counts) {
        if n > 0 {
            *x *= scale / n as f64;
        }
    }
    s
}

/// Heads prepared for repeated evaluation: class weights widened, and
/// support keys passed through the adapter once when a head needs them.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    cfg: PredictorConfig,
    layout: Layout,
    weights: Matrix,
    adapter: Option<&'a AdapterParams>,
    raw_support: Option<&'a SupportSet>,
    adapted_support: Option<SupportSet>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        cfg: PredictorConfig,
        adapter: Option<&'a AdapterParams>,
        support: Option<&'a SupportSet>,
        class_weights: &ClassWeights,
    ) -> Result<Self> {
        Self::from_matrix(cfg, adapter, support, class_weights.matrix())
    }

    pub(crate) fn from_matrix(
        cfg: PredictorConfig,
        adapter: Option<&'a AdapterParams>,
        support: Option<&'a SupportSet>,
        weights: Matrix,
    ) -> Result<Self> {
        Self::prepare(cfg, adapter, support, weights, true)
    }

    fn prepare(
        cfg: PredictorConfig,
        adapter: Option<&'a AdapterParams>,
        support: Option<&'a SupportSet>,
        weights: Matrix,
        check_alpha: bool,
    ) -> Result<Self> {
        if check_alpha {
            cfg.validate()?;
        }
        let layout = cfg.variant.layout();
        let name = cfg.variant.as_str();
        if layout.uses_adapter() && adapter.is_none() {
            return Err(Error::MissingAdapter { variant: name });
        }
        if layout.uses_support() && support.is_none() {
            return Err(Error::MissingSupport { variant: name });
        }
        let dim = weights.cols();
        if let Some(a) = adapter.filter(|_| layout.uses_adapter()) {
            a.validate()?;
            if a.dim() != dim {
                return Err(Error::DimMismatch {
                    context: "adapter vs class weights",
                    expected: dim,
                    found: a.dim(),
                });
            }
        }
        if let Some(s) = support.filter(|_| layout.uses_support()) {
            if s.dim() != dim {
                return Err(Error::DimMismatch {
                    context: "support keys vs class weights",
                    expected: dim,
                    found: s.dim(),
                });
            }
            if s.num_classes() != weights.rows() {
                return Err(Error::DimMismatch {
                    context: "support classes vs class weights",
                    expected: weights.rows(),
                    found: s.num_classes(),
                });
            }
        }
        let adapted_support = if layout.heads().any(|h| h == Head::Support(Repr::Adapted)) {
            let (a, s) = (adapter.unwrap(), support.unwrap());
            Some(adapt_keys(a, s)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            layout,
            weights,
            adapter,
            raw_support: support,
            adapted_support,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    fn support_for(&self, repr: Repr) -> &SupportSet {
        match repr {
            Repr::Raw => self.raw_support.expect("checked in prepare"),
            Repr::Adapted => self.adapted_support.as_ref().expect("checked in prepare"),
        }
    }

    fn embeddings(&self, u0: &[f64]) -> Result<Embeddings> {
        if u0.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "query vs class weights",
                expected: self.dim(),
                found: u0.len(),
            });
        }
        let adapted = if self.layout.uses_adapter() {
            Some(self.adapter.expect("checked in prepare").forward(u0)?)
        } else {
            None
        };
        Ok(Embeddings {
            raw: u0.to_vec(),
            adapted,
        })
    }

    fn head_logits(&self, head: Head, emb: &Embeddings, beta: f64) -> Vec<f64> {
        let scale = self.cfg.scale;
        match head {
            Head::Clap(repr) => {
                let q = emb.get(repr);
                self.weights.iter_rows().map(|w| scale * dot(q, w)).collect()
            }
            Head::Support(repr) => {
                let q = emb.get(repr);
                let s = self.support_for(repr);
                support_head_from_cosines(
                    s.keys().iter_rows().map(|k| dot(q, k)).enumerate(),
                    s.labels(),
                    s.class_counts(),
                    beta,
                    scale,
                )
            }
        }
    }

    /// Each head's logits for one query, before interpolation.
    #[allow(clippy::type_complexity)]
    pub fn heads(&self, u0: &[f64]) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
        let emb = self.embeddings(u0)?;
        let beta = self.cfg.beta;
        Ok((
            self.layout.first.map(|h| self.head_logits(h, &emb, beta)),
            self.layout.second.map(|h| self.head_logits(h, &emb, beta)),
        ))
    }

    pub fn logits(&self, u0: &[f64]) -> Result<LogitVector> {
        let (first, second) = self.heads(u0)?;
        let mut scores = vec![0.0; self.num_classes()];
        combine(self.cfg.alpha, first.as_deref(), second.as_deref(), &mut scores);
        Ok(LogitVector {
            scores,
            scale: self.cfg.scale,
        })
    }

    pub fn accuracy(&self, ds: &EmbeddingDataset) -> Result<f64> {
        self.accuracy_with(Execution::default(), ds)
    }

    pub fn accuracy_with(&self, exec: Execution, ds: &EmbeddingDataset) -> Result<f64> {
        check_labels(ds, self.num_classes())?;
        check_nonempty(ds, "evaluation")?;
        let q = ds.matrix();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let hits = exec.try_map(&idx, |&i| {
            self.logits(q.row(i))
                .map(|l| (l.argmax() == ds.records()[i].label) as usize)
        })?;
        Ok(hits.iter().sum::<usize>() as f64 / ds.len() as f64)
    }
}

struct Embeddings {
    raw: Vec<f64>,
    adapted: Option<Vec<f64>>,
}

impl Embeddings {
    fn get(&self, repr: Repr) -> &[f64] {
        match repr {
            Repr::Raw => &self.raw,
            Repr::Adapted => self.adapted.as_deref().expect("adapter forward ran"),
        }
    }
}

/// Support set with every key replaced by its adapter output.
pub fn adapt_keys(adapter: &AdapterParams, support: &SupportSet) -> Result<SupportSet> {
    let mut keys = Matrix::zeros(support.len(), support.dim());
    for i in 0..support.len() {
        let out = adapter.forward(support.keys().row(i))?;
        keys.row_mut(i).copy_from_slice(&out);
    }
    support.with_keys(keys)
}

fn check_labels(ds: &EmbeddingDataset, num_classes: usize) -> Result<()> {
    if ds.num_classes() != num_classes {
        return Err(Error::DimMismatch {
            context: "dataset classes vs class weights",
            expected: num_classes,
            found: ds.num_classes(),
        });
    }
    Ok(())
}

/// Final interpolated logits for one raw query embedding.
pub fn final_logits(
    cfg: &PredictorConfig,
    u0: &[f64],
    adapter: Option<&AdapterParams>,
    support: Option<&SupportSet>,
    class_weights: &ClassWeights,
) -> Result<LogitVector> {
    Predictor::new(*cfg, adapter, support, class_weights)?.logits(u0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    pub alpha: f64,
    pub beta: f64,
    pub val_acc: f64,
}

fn sorted_unique(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

/// Exhaustive validation search over `alpha_grid × beta_grid`.
///
/// Ties go to the smaller α, then the smaller β. Variants that force α only
/// try the forced value; variants without a support head only try the
/// smallest β, since β cannot change their logits.
pub fn grid_search(
    template: &PredictorConfig,
    val: &EmbeddingDataset,
    adapter: Option<&AdapterParams>,
    support: Option<&SupportSet>,
    class_weights: &ClassWeights,
    alpha_grid: &[f64],
    beta_grid: &[f64],
) -> Result<GridResult> {
    grid_search_with(
        Execution::default(),
        template,
        val,
        adapter,
        support,
        class_weights,
        alpha_grid,
        beta_grid,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn grid_search_with(
    exec: Execution,
    template: &PredictorConfig,
    val: &EmbeddingDataset,
    adapter: Option<&AdapterParams>,
    support: Option<&SupportSet>,
    class_weights: &ClassWeights,
    alpha_grid: &[f64],
    beta_grid: &[f64],
) -> Result<GridResult> {
    if alpha_grid.is_empty() || beta_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let layout = template.variant.layout();
    let alphas = match layout.forced_alpha {
        Some(a) => vec![a],
        None => sorted_unique(alpha_grid),
    };
    let mut betas = sorted_unique(beta_grid);
    if !layout.uses_support() {
        betas.truncate(1);
    }
    for &a in &alphas {
        template.with_alpha(a).validate()?;
    }
    for &b in &betas {
        template.with_alpha(alphas[0]).with_beta(b).validate()?;
    }

    let predictor = Predictor::prepare(*template, adapter, support, class_weights.matrix(), false)?;
    check_labels(val, predictor.num_classes())?;
    check_nonempty(val, "val")?;

    // β-independent per-query state: clap heads, and cosines for support heads
    let queries = val.matrix();
    let idx: Vec<usize> = (0..val.len()).collect();
    let prepared = exec.try_map(&idx, |&i| -> Result<PreparedQuery> {
        let emb = predictor.embeddings(queries.row(i))?;
        let prep = |head: Option<Head>| match head {
            None => PreparedHead::Absent,
            Some(h @ Head::Clap(_)) => PreparedHead::Fixed(predictor.head_logits(h, &emb, 0.0)),
            Some(Head::Support(repr)) => {
                let q = emb.get(repr);
                let s = predictor.support_for(repr);
                PreparedHead::Cosines(s.keys().iter_rows().map(|k| dot(q, k)).collect(), repr)
            }
        };
        Ok(PreparedQuery {
            label: val.records()[i].label,
            first: prep(layout.first),
            second: prep(layout.second),
        })
    })?;

    let points: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let n = predictor.num_classes();
    let scale = template.scale;
    let accs = exec.map(&points, |&(alpha, beta)| {
        let mut out = vec![0.0; n];
        let mut hits = 0usize;
        for q in &prepared {
            let resolve = |h: &PreparedHead| -> Option<Vec<f64>> {
                match h {
                    PreparedHead::Absent => None,
                    PreparedHead::Fixed(v) => Some(v.clone()),
                    PreparedHead::Cosines(c, repr) => {
                        let s = predictor.support_for(*repr);
                        Some(support_head_from_cosines(
                            c.iter().copied().enumerate(),
                            s.labels(),
                            s.class_counts(),
                            beta,
                            scale,
                        ))
                    }
                }
            };
            let (f, s) = (resolve(&q.first), resolve(&q.second));
            combine(alpha, f.as_deref(), s.as_deref(), &mut out);
            if argmax(&out) == q.label {
                hits += 1;
            }
        }
        hits as f64 / prepared.len() as f64
    });

    let mut best = 0;
    for (i, &acc) in accs.iter().enumerate() {
        if acc > accs[best] {
            best = i;
        }
    }
    Ok(GridResult {
        alpha: points[best].0,
        beta: points[best].1,
        val_acc: accs[best],
    })
}

enum PreparedHead {
    Absent,
    Fixed(Vec<f64>),
    Cosines(Vec<f64>, Repr),
}

struct PreparedQuery {
    label: usize,
    first: PreparedHead,
    second: PreparedHead,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
        assert!("clap".parse::<Variant>().is_err());
    }

    #[test]
    fn forced_alpha_constraints() {
        let bad = PredictorConfig::new(Variant::ClapS).with_alpha(0.3);
        assert!(matches!(
            bad.validate(),
            Err(Error::VariantConstraintViolated { forced, .. }) if forced == 1.0
        ));
        let bad = PredictorConfig::new(Variant::ZsClap).with_alpha(0.1);
        assert!(bad.validate().is_err());
        assert!(PredictorConfig::new(Variant::ClapSPlus).with_alpha(0.7).validate().is_ok());
        assert!(PredictorConfig::new(Variant::TipAdapter).with_alpha(1.5).validate().is_err());
    }

    #[test]
    fn layout_table() {
        use Head::*;
        use Repr::*;
        let l = Variant::TipAdapterF.layout();
        assert_eq!((l.first, l.second), (Some(Clap(Raw)), Some(Support(Adapted))));
        let l = Variant::ClapSPlus.layout();
        assert_eq!((l.first, l.second), (Some(Clap(Adapted)), Some(Support(Adapted))));
        let l = Variant::AdapterPlusSupport.layout();
        assert_eq!((l.first, l.second), (Some(Clap(Adapted)), Some(Support(Raw))));
        assert!(!Variant::TipAdapter.needs_adapter());
        assert!(!Variant::ZsClap.needs_support());
        assert!(!Variant::AdapterPlusZs.needs_support());
    }

    #[test]
    fn combine_endpoints_are_exact() {
        let a = [1.5, -2.25, 3.0];
        let b = [0.1, 0.7, 0.3];
        let mut out = [0.0; 3];
        combine(0.0, Some(&a), Some(&b), &mut out);
        assert_eq!(out, a);
        combine(1.0, Some(&a), Some(&b), &mut out);
        assert_eq!(out, b);
    }
}
