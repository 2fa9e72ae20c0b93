//! A regressor trained alone against the jointly trained one, both judged
//! on the items the joint classifier accepts.
//!
//! `cargo run --release --example baseline_vs_joint -- [epoch_scale]`

use price_suggest::data::{generate_synthetic, SyntheticConfig};
use price_suggest::features::Ablation;
use price_suggest::metrics::log_error_to_ratio;
use price_suggest::model::Strategy;
use price_suggest::trainer::{evaluate_on_positives, train_model, Prepared, TrainingConfig};

fn main() -> price_suggest::Result<()> {
    env_logger::init();
    let scale: f64 = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("epoch scale"));

    let (dataset, _) = generate_synthetic(&SyntheticConfig::default())?;
    let mut cfg = TrainingConfig::default();
    cfg.epochs_phase1 = (cfg.epochs_phase1 as f64 * scale).round() as usize;
    cfg.epochs_phase2 = (cfg.epochs_phase2 as f64 * scale).round() as usize;
    let prepared = Prepared::new(&dataset, &cfg)?;

    let joint = train_model(&prepared, &cfg)?.model;
    let baseline = train_model(
        &prepared,
        &TrainingConfig {
            strategy: Strategy::Baseline,
            ..cfg.clone()
        },
    )?
    .model;

    let classifier = joint.classifier.as_ref().expect("joint model has a classifier");
    let (test, rp) = (&prepared.test, &cfg.range);
    let ours = evaluate_on_positives(classifier, &joint.regressor, test, rp, Ablation::None)?;
    let base = evaluate_on_positives(classifier, &baseline.regressor, test, rp, Ablation::None)?;

    println!("{:<10} {:>8} {:>8} {:>8} {:>8}", "", "SMLE", "SPDMLE", "SPIMLE", "UMLE");
    for (name, r) in [("Baseline", &base), ("Ours", &ours)] {
        println!(
            "{name:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.smle, r.spdmle, r.spimle, r.umle
        );
    }
    println!(
        "a log error of {:.4} is a price ratio of {:.3}",
        ours.smle,
        log_error_to_ratio(ours.smle)
    );
    Ok(())
}
