//! Positive-side errors of the full model and of each input ablation, all
//! trained with the same constraint.
//!
//! `cargo run --release --example ablations -- [epoch_scale]`

use price_suggest::data::{generate_synthetic, SyntheticConfig};
use price_suggest::features::Ablation;
use price_suggest::trainer::{evaluate_split, train_model, Prepared, TrainingConfig};

fn main() -> price_suggest::Result<()> {
    env_logger::init();
    let scale: f64 = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("epoch scale"));

    let (dataset, _) = generate_synthetic(&SyntheticConfig::default())?;
    let mut base = TrainingConfig::default();
    base.epochs_phase1 = (base.epochs_phase1 as f64 * scale).round() as usize;
    base.epochs_phase2 = (base.epochs_phase2 as f64 * scale).round() as usize;
    let prepared = Prepared::new(&dataset, &base)?;

    println!("{:<20} {:>9} {:>8} {:>8}", "model", "positive", "SMLE", "UMLE");
    for ablation in [Ablation::None, Ablation::NoAttention, Ablation::NoImage, Ablation::NoText] {
        let cfg = TrainingConfig {
            ablation,
            ..base.clone()
        };
        let m = train_model(&prepared, &cfg)?.model;
        let r = evaluate_split(m.classifier.as_ref(), &m.regressor, &prepared.test, &m.range, ablation)?;
        println!(
            "{:<20} {:>8.1}% {:>8.4} {:>8.4}",
            ablation.label(),
            100.0 * r.positive_fraction,
            r.positive.smle,
            r.positive.umle
        );
    }
    Ok(())
}
