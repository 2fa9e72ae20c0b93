use price_suggest::data::{inverse_log_transform, log_transform, split_dataset, ItemRecord, Status};
use price_suggest::features::{pad_or_truncate, quantile_sorted, Quartiles, Standardizer, STAT_DIM, TOKEN_LEN};
use price_suggest::metrics::{compute_metrics_raw, ItemOutcome};
use price_suggest::numeric::softmax;
use price_suggest::objectives::{
    percentile_objective, range_loss, threshold_labels, ClassWeights, ConstraintConfig, RangeLossParams,
    RangeMode,
};
use proptest::prelude::*;

fn range_params() -> impl Strategy<Value = RangeLossParams> {
    (1.01f64..2.0, 0.3f64..0.99, any::<bool>()).prop_map(|(mu, nu, additive)| RangeLossParams {
        mu,
        nu,
        mode: if additive { RangeMode::AdditiveLog } else { RangeMode::MultiplicativeLog },
    })
}

fn status() -> impl Strategy<Value = Status> {
    prop_oneof![Just(Status::Sold), Just(Status::Unsold)]
}

fn outcomes_and_preds() -> impl Strategy<Value = Vec<(ItemOutcome, f64)>> {
    prop::collection::vec(
        (status(), 0.1f64..8.0, -3.0f64..3.0).prop_map(|(status, log_price, err)| {
            (ItemOutcome { status, log_price }, log_price + err)
        }),
        0..80,
    )
}

fn record(i: usize) -> ItemRecord {
    ItemRecord {
        id: format!("item-{i}"),
        category: "c".into(),
        visual: vec![0.0],
        tokens: pad_or_truncate(&[], 2).unwrap(),
        status: Status::Sold,
        log_price: 1.0,
        quality_hint: None,
    }
}

proptest! {
    #[test]
    fn range_loss_is_distance_to_interval(st in status(), p in -2.0f64..10.0, price in 0.1f64..8.0, rp in range_params()) {
        let (loss, grad) = range_loss(st, p, price, &rp);
        let (lo, hi) = rp.target_range(st, price);
        prop_assert!(lo < hi);
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, lo <= p && p <= hi);
        prop_assert!((loss - (lo - p).max(p - hi).max(0.0)).abs() <= 1e-12);
        prop_assert_eq!(grad, if p < lo { -1.0 } else if p > hi { 1.0 } else { 0.0 });
    }

    #[test]
    fn metric_reports_are_consistent(items in outcomes_and_preds(), rp in range_params()) {
        let (outcomes, preds): (Vec<ItemOutcome>, Vec<f64>) = items.into_iter().unzip();
        let r = compute_metrics_raw(&preds, &outcomes, &rp).unwrap();
        prop_assert!(r.check_invariants().is_ok());
        prop_assert!(r.decomposition_residual() <= 1e-12);
        prop_assert_eq!(r.i1 + r.i4, outcomes.len());
        prop_assert!(r.i2 + r.i3 <= r.i1 && r.i5 + r.i6 <= r.i4);
        for v in [r.smle, r.spdmle, r.spimle, r.umle, r.updmle, r.upimle] {
            prop_assert!(v >= 0.0 && v.is_finite());
        }

        // Duplicating every item leaves the means unchanged and doubles counts.
        let twice_o: Vec<ItemOutcome> = outcomes.iter().chain(&outcomes).copied().collect();
        let twice_p: Vec<f64> = preds.iter().chain(&preds).copied().collect();
        let d = compute_metrics_raw(&twice_p, &twice_o, &rp).unwrap();
        for (a, b) in [(r.smle, d.smle), (r.spdmle, d.spdmle), (r.spimle, d.spimle), (r.umle, d.umle), (r.updmle, d.updmle), (r.upimle, d.upimle)] {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        prop_assert_eq!([d.i1, d.i2, d.i3, d.i4, d.i5, d.i6], [2 * r.i1, 2 * r.i2, 2 * r.i3, 2 * r.i4, 2 * r.i5, 2 * r.i6]);
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 0usize..300, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (train_frac, val_frac) = (a, (1.0 - a) * b);
        let fractions = [train_frac, val_frac, 1.0 - train_frac - val_frac];
        let items: Vec<ItemRecord> = (0..n).map(record).collect();
        let s = split_dataset(&items, fractions, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        let mut ids: Vec<&str> = s.train.iter().chain(&s.val).chain(&s.test).map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(split_dataset(&items, fractions, seed).unwrap(), s);
    }

    #[test]
    fn token_vectors_have_fixed_length(tokens in prop::collection::vec(0u32..50, 0..100)) {
        let v = pad_or_truncate(&tokens, 50).unwrap();
        prop_assert_eq!(v.ids().len(), TOKEN_LEN);
        let kept = tokens.len().min(TOKEN_LEN);
        prop_assert_eq!(&v.ids()[..kept], &tokens[..kept]);
        prop_assert!(v.ids()[kept..].iter().all(|&t| t == 0));
        prop_assert!(pad_or_truncate(&tokens, 50).unwrap() == v);
    }

    #[test]
    fn out_of_vocabulary_tokens_are_rejected(mut tokens in prop::collection::vec(0u32..50, 1..60), pos in any::<prop::sample::Index>()) {
        let i = pos.index(tokens.len());
        tokens[i] = 50;
        prop_assert!(pad_or_truncate(&tokens, 50).is_err());
    }

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-500.0f64..500.0, 1..8)) {
        let s = softmax(&x);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + 3.0).collect();
        for (a, b) in s.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_transform_round_trips(price in 1e-6f64..1e9) {
        let back = inverse_log_transform(log_transform(price).unwrap());
        prop_assert!((back - price).abs() <= 1e-12 * price);
    }

    #[test]
    fn non_positive_prices_are_rejected(price in -1e6f64..=0.0) {
        prop_assert!(log_transform(price).is_err());
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-10.0f64..10.0, 1..50)) {
        let q = Quartiles::from_values(&values).unwrap();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= q.q1 && q.q1 <= q.q2 && q.q2 <= q.q3 && q.q3 <= hi);
        prop_assert!(lo - 1e-12 <= q.mean && q.mean <= hi + 1e-12);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(quantile_sorted(&sorted, 0.0), lo);
        prop_assert_eq!(quantile_sorted(&sorted, 1.0), hi);
    }

    #[test]
    fn standardized_columns_are_centered(rows in prop::collection::vec(prop::array::uniform16(-5.0f64..5.0), 2..40)) {
        let rows: Vec<[f64; STAT_DIM]> = rows;
        let s = Standardizer::fit(&rows).unwrap();
        let t: Vec<[f64; STAT_DIM]> = rows.iter().map(|r| s.transform(r)).collect();
        for c in 0..STAT_DIM {
            let mean = t.iter().map(|r| r[c]).sum::<f64>() / t.len() as f64;
            prop_assert!(mean.abs() <= 1e-9);
            if s.std[c] > 0.0 {
                let var = t.iter().map(|r| r[c] * r[c]).sum::<f64>() / t.len() as f64;
                prop_assert!((var - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn class_weights_balance_the_classes(p in 0usize..1000, n in 0usize..1000) {
        prop_assume!(p + n > 0);
        let w = ClassWeights::from_counts(p, n);
        prop_assert_eq!(w.positive == 0.0, p == 0);
        prop_assert_eq!(w.negative == 0.0, n == 0);
        if p > 0 && n > 0 {
            // Squared weights give both classes equal total mass.
            let mass_p = p as f64 * w.positive * w.positive;
            let mass_n = n as f64 * w.negative * w.negative;
            prop_assert!((mass_p - mass_n).abs() <= 1e-9 * mass_p);
            prop_assert!((mass_p + mass_n - (p + n) as f64).abs() <= 1e-9 * (p + n) as f64);
        }
    }

    #[test]
    fn threshold_labels_grow_with_epsilon(losses in prop::collection::vec(0.0f64..1.0, 0..50), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let a = threshold_labels(&losses, lo);
        let b = threshold_labels(&losses, hi);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }

    #[test]
    fn percentile_fraction_counts_hard_positives(
        confs in prop::collection::vec(0.0f64..1.0, 1..60),
        delta in 0.05f64..0.95,
        beta in 0.0f64..5.0,
    ) {
        let losses = vec![0.1; confs.len()];
        let out = percentile_objective(&confs, &losses, &ConstraintConfig::percentile(delta, beta)).unwrap();
        let count = confs.iter().filter(|&&c| c >= 0.5).count();
        prop_assert_eq!(out.positive_fraction, count as f64 / confs.len() as f64);
        prop_assert!(out.constraint_term >= 0.0);
        prop_assert_eq!(out.constraint_term > 0.0, beta > 0.0 && out.positive_fraction < delta);
    }
}
