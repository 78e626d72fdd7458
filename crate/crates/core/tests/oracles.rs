//! Heads, retrieval and gradients checked against independent scalar
//! oracles written here.

mod common;

use common::*;
use rand::Rng;
use support_adapt::adapter::AdapterParams;
use support_adapt::predictor::final_logits;
use support_adapt::{clap_logits, support_logits, PredictorConfig, SupportSet, Variant};

#[test]
fn clap_logits_match_dot_product_loop() {
    let mut r = rng(1);
    for _ in 0..50 {
        let (n, c) = (3, 5);
        let w = random_weights(&mut r, n, c);
        let u = unit(&mut r, c);
        let scale = r.random_range(1.0..100.0);
        let got = clap_logits(&u, &w, scale).unwrap();
        let mut expected = vec![0.0; n];
        for j in 0..n {
            for d in 0..c {
                expected[j] += u[d] * w.rows()[j][d] as f64;
            }
            expected[j] *= scale;
        }
        assert!(max_abs_diff(&got.scores, &expected) <= 1e-6);
    }
}

#[test]
fn support_logits_match_double_loop() {
    let mut r = rng(2);
    for _ in 0..100 {
        let n = r.random_range(1..=5);
        let k = r.random_range(1..=4);
        let c = r.random_range(2..=16);
        let s = random_support(&mut r, n, k, c);
        let u = unit(&mut r, c);
        let beta = r.random_range(0.0..12.0);
        let got = support_logits(&u, &s, beta).unwrap();
        let expected = support_oracle(&u, &rows(s.keys()), s.labels(), n, beta);
        assert!(max_abs_diff(&got.scores, &expected) <= 1e-6);
    }
}

#[test]
fn support_fixed_instance_n3_k2_c4() {
    let mut r = rng(3);
    let s = random_support(&mut r, 3, 2, 4);
    let u = unit(&mut r, 4);
    let got = support_logits(&u, &s, 5.5).unwrap();
    let expected = support_oracle(&u, &rows(s.keys()), s.labels(), 3, 5.5);
    assert!(max_abs_diff(&got.scores, &expected) <= 1e-6);
}

#[test]
fn adapter_forward_matches_scalar_loop_with_biases() {
    let mut r = rng(4);
    let (c, h) = (6, 2);
    let mut p = AdapterParams::init(c, h, 0.2, 9).unwrap();
    p.b1 = vec![0.1, -0.05];
    p.b2 = (0..c).map(|_| r.random_range(-0.1..0.1)).collect();
    for _ in 0..20 {
        let u = unit(&mut r, c);
        let mut hid = vec![0.0; h];
        for i in 0..h {
            let mut z = p.b1[i];
            for j in 0..c {
                z += p.w1.row(i)[j] * u[j];
            }
            hid[i] = z.max(0.0);
        }
        let mut m = vec![0.0; c];
        for i in 0..c {
            let mut z = p.b2[i];
            for j in 0..h {
                z += p.w2.row(i)[j] * hid[j];
            }
            m[i] = 0.2 * z + 0.8 * u[i];
        }
        let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<f64> = m.iter().map(|x| x / n).collect();
        assert!(max_abs_diff(&p.forward(&u).unwrap(), &expected) <= 1e-6);
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..10 {
        let inst = grad_instance(seed, Variant::ClapSPlus, 6, 3, 2, 1);
        for (name, err) in ["w1", "b1", "w2", "b2"].iter().zip(inst.relative_errors(1e-4)) {
            assert!(err <= 1e-3, "seed {seed} tensor {name}: relative error {err}");
        }
    }
}

#[test]
fn gradients_match_for_every_adapter_variant() {
    let variants = Variant::ALL.iter().copied().filter(|v| v.needs_adapter());
    for (seed, v) in variants.enumerate() {
        let inst = grad_instance(100 + seed as u64, v, 6, 3, 3, 2);
        for (name, err) in ["w1", "b1", "w2", "b2"].iter().zip(inst.relative_errors(1e-4)) {
            assert!(err <= 1e-3, "{v} tensor {name}: relative error {err}");
        }
    }
}

#[test]
fn duplicated_batch_keeps_mean_gradient() {
    let inst = grad_instance(7, Variant::ClapSPlus, 6, 3, 2, 2);
    let q = inst.queries();
    let doubled: Vec<_> = q.iter().chain(q.iter()).copied().collect();
    let (l1, g1) =
        support_adapt::adapter_backward(&inst.params, &q, &inst.cfg, Some(&inst.support), &inst.weights)
            .unwrap();
    let (l2, g2) = support_adapt::adapter_backward(
        &inst.params,
        &doubled,
        &inst.cfg,
        Some(&inst.support),
        &inst.weights,
    )
    .unwrap();
    assert!((l1 - l2).abs() <= 1e-7);
    for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
        assert!(max_abs_diff(a, b) <= 1e-7);
    }
}

/// `scale / K_j · Σ exp(...)`: the support head as it enters the blend.
fn normalized_support(u: &[f64], s: &SupportSet, beta: f64, scale: f64) -> Vec<f64> {
    let raw = support_oracle(u, &rows(s.keys()), s.labels(), s.num_classes(), beta);
    raw.iter()
        .zip(s.class_counts())
        .map(|(x, &k)| scale * x / k as f64)
        .collect()
}

#[test]
fn tip_adapter_endpoints() {
    let mut r = rng(8);
    for _ in 0..100 {
        let n = r.random_range(2..=5);
        let k = r.random_range(1..=4);
        let c = r.random_range(n..=16);
        let w = random_weights(&mut r, n, c);
        let s = random_support(&mut r, n, k, c);
        let u = unit(&mut r, c);
        let beta = r.random_range(0.5..10.0);
        let base = PredictorConfig::new(Variant::TipAdapter).with_beta(beta);

        let at0 = final_logits(&base.with_alpha(0.0), &u, None, Some(&s), &w).unwrap();
        let clap = clap_logits(&u, &w, base.scale).unwrap();
        assert_eq!(at0.argmax(), clap.argmax());
        assert!(max_abs_diff(&at0.scores, &clap.scores) <= 1e-7);

        let at1 = final_logits(&base.with_alpha(1.0), &u, None, Some(&s), &w).unwrap();
        let sup = support_logits(&u, &s, beta).unwrap();
        assert_eq!(at1.argmax(), sup.argmax());
        assert!(max_abs_diff(&at1.scores, &normalized_support(&u, &s, beta, base.scale)) <= 1e-7);
    }
}

#[test]
fn residual_zero_adapter_collapses_to_tip_adapter() {
    let mut r = rng(9);
    for i in 0..50 {
        let (n, k, c) = (4, 3, 12);
        let w = random_weights(&mut r, n, c);
        let s = random_support(&mut r, n, k, c);
        let u = unit(&mut r, c);
        let adapter = AdapterParams::init(c, 3, 0.0, i).unwrap();
        let alpha = r.random_range(0.0..=1.0);
        let beta = r.random_range(0.5..10.0);
        let tip = PredictorConfig::new(Variant::TipAdapter).with_alpha(alpha).with_beta(beta);
        let plus = PredictorConfig::new(Variant::ClapSPlus).with_alpha(alpha).with_beta(beta);
        let a = final_logits(&tip, &u, None, Some(&s), &w).unwrap();
        let b = final_logits(&plus, &u, Some(&adapter), Some(&s), &w).unwrap();
        assert!(max_abs_diff(&a.scores, &b.scores) <= 1e-7);
    }
}

#[test]
fn swapped_pairings_change_logits() {
    // each row of the variant table, re-wired with the other embedding,
    // must give different numbers on a generic instance
    let mut r = rng(10);
    let (n, k, c) = (3, 2, 8);
    let w = random_weights(&mut r, n, c);
    let s = random_support(&mut r, n, k, c);
    let u = unit(&mut r, c);
    let mut adapter = AdapterParams::init(c, 4, 0.5, 3).unwrap();
    // a non-zero output bias keeps u_f away from u0 even if every ReLU is off
    adapter.b2 = (0..c).map(|i| 0.05 * (i as f64 + 1.0)).collect();
    let logits = |v: Variant| {
        let mut cfg = PredictorConfig::new(v);
        if v.layout().forced_alpha.is_none() {
            cfg = cfg.with_alpha(0.4);
        }
        final_logits(&cfg, &u, Some(&adapter), Some(&s), &w).unwrap().scores
    };
    let pairs = [
        (Variant::ZsClap, Variant::AdapterOnly),
        (Variant::TipAdapter, Variant::TipAdapterF),
        (Variant::TipAdapter, Variant::AdapterPlusSupport),
        (Variant::TipAdapterF, Variant::ClapSPlus),
        (Variant::AdapterPlusSupport, Variant::ClapSPlus),
    ];
    for (a, b) in pairs {
        assert!(max_abs_diff(&logits(a), &logits(b)) > 1e-6, "{a} vs {b}");
    }
    // and the oracle for the mixed row: clap on u_f plus support on u0
    let uf = adapter.forward(&u).unwrap();
    let clap_f: Vec<f64> = w
        .rows()
        .iter()
        .map(|row| 100.0 * row.iter().zip(&uf).map(|(a, b)| *a as f64 * b).sum::<f64>())
        .collect();
    let sup = normalized_support(&u, &s, 5.5, 100.0);
    let expected: Vec<f64> = clap_f.iter().zip(&sup).map(|(a, b)| 0.6 * a + 0.4 * b).collect();
    assert!(max_abs_diff(&logits(Variant::AdapterPlusSupport), &expected) <= 1e-9);
}
