mod common;

use common::small_dataset;
use price_suggest::data::{Dataset, Status};
use price_suggest::metrics::compute_metrics;
use price_suggest::model::{predict_items, HeadKind, HeadParams, Strategy};
use price_suggest::objectives::ConstraintConfig;
use price_suggest::trainer::{
    evaluate_split, run_experiment_suite, train_baseline_regression, train_joint, Prepared,
    PreparedSplit, Sweep, TrainingConfig,
};
use price_suggest::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> TrainingConfig {
    TrainingConfig {
        epochs_phase1: 4,
        epochs_phase2: 2,
        batch_size: 32,
        hidden_sizes: vec![16, 8],
        embed_dim: 4,
        ..TrainingConfig::default()
    }
}

fn prepared(n: usize, cfg: &TrainingConfig) -> Prepared {
    Prepared::new(&small_dataset(n, 17), cfg).unwrap()
}

#[test]
fn zero_epochs_returns_initialization() {
    let cfg = TrainingConfig {
        epochs_phase1: 0,
        epochs_phase2: 0,
        ..small_cfg()
    };
    let p = prepared(100, &cfg);
    let heads = train_joint(&p.train, &p.architecture, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = HeadParams::init(HeadKind::Classifier, &p.architecture, &mut rng);
    let r = HeadParams::init(HeadKind::Regressor, &p.architecture, &mut rng);
    assert_eq!(heads.classifier.unwrap(), c);
    assert_eq!(heads.regressor, r);
    assert!(heads.history.epochs.is_empty());
}

#[test]
fn training_is_deterministic() {
    for cfg in [
        small_cfg(),
        TrainingConfig {
            constraint: ConstraintConfig::threshold(0.15, 1.0),
            ..small_cfg()
        },
    ] {
        let p = prepared(200, &cfg);
        let a = train_joint(&p.train, &p.architecture, &cfg).unwrap();
        let b = train_joint(&p.train, &p.architecture, &cfg).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.regressor, b.regressor);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.epochs.len(), cfg.total_epochs());
        for e in &a.history.epochs {
            assert!(e.objective.is_finite() && e.constraint_term.is_finite());
            assert!((0.0..=1.0).contains(&e.positive_fraction));
        }
        assert_eq!(a.history.epochs[3].learning_rate, cfg.lr_phase1);
        assert_eq!(a.history.epochs[4].learning_rate, cfg.lr_phase2);

        let other = TrainingConfig { seed: 1, ..cfg.clone() };
        let c = train_joint(&p.train, &p.architecture, &other).unwrap();
        assert_ne!(a.regressor, c.regressor);
    }
}

#[test]
fn baseline_reaches_constant_floor() {
    // Every item sold at the same price: a constant prediction in range
    // gives zero loss.
    let mut data: Dataset = small_dataset(300, 18);
    for r in &mut data.items {
        r.status = Status::Sold;
        r.log_price = 2.0;
    }
    let cfg = TrainingConfig {
        epochs_phase1: 30,
        epochs_phase2: 10,
        lr_phase1: 5e-3,
        lr_phase2: 1e-3,
        ..small_cfg()
    };
    let p = Prepared::new(&data, &cfg).unwrap();
    let heads = train_baseline_regression(&p.train, &p.architecture, &cfg).unwrap();
    assert!(heads.classifier.is_none());
    let last = heads.history.epochs.last().unwrap();
    assert!(last.objective < 0.01, "mean loss {}", last.objective);

    let joint = train_joint(&p.train, &p.architecture, &small_cfg()).unwrap();
    assert_eq!(heads.regressor.architecture(), joint.regressor.architecture());
}

#[test]
fn evaluation_without_classifier_is_all_positive() {
    let cfg = small_cfg();
    let p = prepared(150, &cfg);
    let heads = train_baseline_regression(&p.train, &p.architecture, &cfg).unwrap();
    let report = evaluate_split(None, &heads.regressor, &p.test, &cfg.range, cfg.ablation).unwrap();
    assert_eq!(report.n_positive, p.test.len());
    assert_eq!(report.negative.n_items, 0);
    assert_eq!(report.positive_fraction, 1.0);

    let preds = predict_items(None, &heads.regressor, &p.test.batch, cfg.ablation).unwrap();
    assert_eq!(report.positive, compute_metrics(&preds, &p.test.outcomes, &cfg.range).unwrap());

    let empty = PreparedSplit::new(&[], &p.features).unwrap();
    assert!(matches!(
        evaluate_split(None, &heads.regressor, &empty, &cfg.range, cfg.ablation),
        Err(Error::Empty(_))
    ));
}

#[test]
fn positive_fraction_is_label_count() {
    let cfg = small_cfg();
    let p = prepared(150, &cfg);
    let heads = train_joint(&p.train, &p.architecture, &cfg).unwrap();
    let c = heads.classifier.as_ref().unwrap();
    let report = evaluate_split(Some(c), &heads.regressor, &p.test, &cfg.range, cfg.ablation).unwrap();
    let preds = predict_items(Some(c), &heads.regressor, &p.test.batch, cfg.ablation).unwrap();
    let positives = preds.iter().filter(|p| p.is_positive()).count();
    assert_eq!(report.n_positive, positives);
    assert_eq!(report.positive_fraction, positives as f64 / p.test.len() as f64);
}

#[test]
fn divergence_names_epoch_and_batch() {
    let cfg = TrainingConfig {
        lr_phase1: 1e305,
        ..small_cfg()
    };
    let p = prepared(100, &cfg);
    match train_joint(&p.train, &p.architecture, &cfg) {
        Err(Error::Divergence { epoch, batch }) => assert!(epoch < cfg.total_epochs() && batch < 4),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let p = prepared(60, &small_cfg());
    let bad = [
        TrainingConfig { lr_phase2: 0.0, ..small_cfg() },
        TrainingConfig { batch_size: 0, ..small_cfg() },
        TrainingConfig {
            constraint: ConstraintConfig::threshold(0.15, 1.0),
            batch_size: 1,
            ..small_cfg()
        },
    ];
    for cfg in bad {
        assert!(matches!(
            train_joint(&p.train, &p.architecture, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }
}

#[test]
fn sweep_failure_names_the_configuration() {
    let cfg = small_cfg();
    let p = prepared(80, &cfg);
    let sweep = Sweep::Percentile { deltas: vec![0.5, 1.5] };
    match run_experiment_suite(&p, &cfg, &sweep) {
        Err(Error::Experiment { config, .. }) => assert!(config.contains("delta=1.5"), "{config}"),
        other => panic!("expected an experiment error, got {other:?}"),
    }
}

#[test]
fn ablation_sweep_rows() {
    let cfg = TrainingConfig {
        epochs_phase1: 1,
        epochs_phase2: 1,
        ..small_cfg()
    };
    let p = prepared(120, &cfg);
    let sweep = Sweep::Ablation {
        ablations: vec![
            price_suggest::features::Ablation::NoAttention,
            price_suggest::features::Ablation::NoImage,
            price_suggest::features::Ablation::NoText,
        ],
    };
    let table = run_experiment_suite(&p, &cfg, &sweep).unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(
        labels,
        ["Baseline", "Ours", "Ours W/O attention", "Ours W/O image", "Ours W/O text"]
    );
    // Baseline is judged on the full model's positives.
    assert_eq!(table.rows[0].n_positive, table.rows[1].n_positive);
    assert_eq!(cfg.strategy, Strategy::Joint);

    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("label,mode,level,weight,n_items,n_positive,pct_positive,pos_smle"));
    assert_eq!(text.lines().count(), 6);
}
