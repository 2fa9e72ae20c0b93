//! Joint training under a loss-threshold constraint, with the weight of
//! the cross-entropy term selected on the validation split.
//!
//! `cargo run --release --example train_threshold -- [epsilon] [epoch_scale]`

use price_suggest::data::{generate_synthetic, SyntheticConfig};
use price_suggest::objectives::ConstraintConfig;
use price_suggest::trainer::{evaluate_split, train_model, Prepared, TrainingConfig, TuningConfig};

fn main() -> price_suggest::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let epsilon: f64 = args.next().map_or(0.15, |a| a.parse().expect("epsilon"));
    let scale: f64 = args.next().map_or(1.0, |a| a.parse().expect("epoch scale"));

    let (dataset, _) = generate_synthetic(&SyntheticConfig::default())?;
    let mut cfg = TrainingConfig {
        constraint: ConstraintConfig::threshold(epsilon, 1.0),
        tuning: TuningConfig {
            enabled: true,
            epoch_fraction: 0.34,
            ..TuningConfig::default()
        },
        ..TrainingConfig::default()
    };
    cfg.epochs_phase1 = (cfg.epochs_phase1 as f64 * scale).round() as usize;
    cfg.epochs_phase2 = (cfg.epochs_phase2 as f64 * scale).round() as usize;
    let prepared = Prepared::new(&dataset, &cfg)?;

    let outcome = train_model(&prepared, &cfg)?;
    for c in &outcome.tuning {
        println!(
            "gamma {:<4} validation positive {:.3}  positive SMLE {:.4}",
            c.weight, c.positive_fraction, c.positive_smle
        );
    }
    println!("selected gamma {}", outcome.model.constraint.gamma);
    let single: usize = outcome.history.epochs.iter().map(|e| e.single_class_batches).sum();
    if single > 0 {
        println!("{single} batches held a single label class");
    }

    let m = &outcome.model;
    let report = evaluate_split(m.classifier.as_ref(), &m.regressor, &prepared.test, &m.range, m.ablation)?;
    println!(
        "test: {} of {} positive ({:.1}%)",
        report.n_positive,
        report.n_items,
        100.0 * report.positive_fraction
    );
    println!("positive SMLE {:.4}  UMLE {:.4}", report.positive.smle, report.positive.umle);
    println!("negative SMLE {:.4}  UMLE {:.4}", report.negative.smle, report.negative.umle);
    Ok(())
}
