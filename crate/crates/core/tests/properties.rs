mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use support_adapt::adapter::AdapterParams;
use support_adapt::linalg::Matrix;
use support_adapt::predictor::final_logits;
use support_adapt::{
    clap_logits, support_logits, EmbeddingDataset, PredictorConfig, Record, Split, SupportSet,
    Variant,
};

fn split_strategy() -> impl Strategy<Value = Split> {
    prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)]
}

prop_compose! {
    fn dataset()(dim in 1usize..6, n in 1usize..4, len in 0usize..12)
        (records in prop::collection::vec(
            ("[a-z0-9_]{1,8}", split_strategy(), 0..n, prop::collection::vec(-2.0f32..2.0, dim)),
            len,
        ), dim in Just(dim), n in Just(n)) -> EmbeddingDataset {
        let records = records
            .into_iter()
            .enumerate()
            .map(|(i, (id, split, label, vector))| Record { id: format!("{id}{i}"), split, label, vector })
            .collect();
        EmbeddingDataset::new(dim, class_names(n), records).unwrap()
    }
}

proptest! {
    #[test]
    fn save_load_is_identity(ds in dataset()) {
        let back = EmbeddingDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn splits_partition_the_records(ds in dataset()) {
        let mut parts: Vec<Record> = Split::ALL
            .iter()
            .flat_map(|&s| ds.split(s).records().to_vec())
            .collect();
        let mut all = ds.records().to_vec();
        let key = |r: &Record| r.id.clone();
        parts.sort_by_key(key);
        all.sort_by_key(key);
        prop_assert_eq!(parts, all);
    }

    #[test]
    fn normalize_is_idempotent(ds in dataset()) {
        if let Ok(once) = ds.normalize() {
            let twice = once.normalize().unwrap();
            for (a, b) in once.records().iter().zip(twice.records()) {
                for (x, y) in a.vector.iter().zip(&b.vector) {
                    prop_assert!((x - y).abs() <= 1e-7);
                }
            }
        }
    }

    #[test]
    fn support_logits_ignore_row_order(seed in any::<u64>(), n in 1usize..5, k in 1usize..4,
                                       c in 2usize..10, beta in 0.0f64..20.0) {
        let mut r = rng(seed);
        let s = random_support(&mut r, n, k, c);
        let u = unit(&mut r, c);
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.shuffle(&mut r);
        let keys: Vec<Vec<f64>> = order.iter().map(|&i| s.keys().row(i).to_vec()).collect();
        let labels = order.iter().map(|&i| s.labels()[i]).collect();
        let ids = order.iter().map(|&i| s.ids()[i].clone()).collect();
        let shuffled = SupportSet::from_parts(Matrix::from_rows(c, &keys).unwrap(), labels, ids, n).unwrap();
        let a = support_logits(&u, &s, beta).unwrap();
        let b = support_logits(&u, &shuffled, beta).unwrap();
        prop_assert!(max_abs_diff(&a.scores, &b.scores) <= 1e-7);
    }

    #[test]
    fn clap_argmax_ignores_scale(seed in any::<u64>(), s1 in 0.01f64..500.0, s2 in 0.01f64..500.0) {
        let mut r = rng(seed);
        let w = random_weights(&mut r, 6, 10);
        let u = unit(&mut r, 10);
        prop_assert_eq!(
            clap_logits(&u, &w, s1).unwrap().argmax(),
            clap_logits(&u, &w, s2).unwrap().argmax()
        );
    }

    #[test]
    fn clap_logits_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let w = random_weights(&mut r, 4, 7);
        let (u1, u2) = (unit(&mut r, 7), unit(&mut r, 7));
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + b * y).collect();
        let l1 = clap_logits(&u1, &w, 100.0).unwrap().scores;
        let l2 = clap_logits(&u2, &w, 100.0).unwrap().scores;
        let lm = clap_logits(&mix, &w, 100.0).unwrap().scores;
        let expected: Vec<f64> = l1.iter().zip(&l2).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(max_abs_diff(&lm, &expected) <= 1e-9);
    }

    #[test]
    fn final_logits_affine_in_alpha(seed in any::<u64>(), beta in 0.0f64..10.0) {
        let mut r = rng(seed);
        let (n, k, c) = (4, 2, 8);
        let w = random_weights(&mut r, n, c);
        let s = random_support(&mut r, n, k, c);
        let u = unit(&mut r, c);
        let adapter = AdapterParams::init(c, 2, 0.3, seed).unwrap();
        for v in Variant::ALL.into_iter().filter(|v| v.layout().forced_alpha.is_none()) {
            let cfg = PredictorConfig::new(v).with_beta(beta);
            let at = |alpha: f64| final_logits(&cfg.with_alpha(alpha), &u, Some(&adapter), Some(&s), &w).unwrap().scores;
            let (l0, l1, mid) = (at(0.0), at(1.0), at(0.5));
            let mean: Vec<f64> = l0.iter().zip(&l1).map(|(x, y)| 0.5 * (x + y)).collect();
            prop_assert!(max_abs_diff(&mid, &mean) <= 1e-7);
        }
    }

    #[test]
    fn adapter_output_is_unit_norm(seed in any::<u64>(), c in 2usize..16, h in 1usize..6, ratio in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let p = AdapterParams::init(c, h, ratio, seed).unwrap();
        let u = unit(&mut r, c);
        if let Ok(out) = p.forward(&u) {
            let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn adamw_zero_gradient_zero_decay_is_identity(params in prop::collection::vec(-5.0f64..5.0, 1..20),
                                                  lr in 0.0f64..1.0) {
        let mut p = params.clone();
        let g = vec![0.0; p.len()];
        let mut opt = support_adapt::adapter::AdamW::new(lr, (0.9, 0.999), 1e-8, 0.0);
        for _ in 0..3 {
            opt.step(&mut [p.as_mut_slice()], &[g.as_slice()]).unwrap();
        }
        prop_assert_eq!(p, params);
    }
}
