//! Joint training under a percentile constraint on synthetic data.
//!
//! `cargo run --release --example train_percentile -- [delta] [epoch_scale]`

use std::time::Instant;

use price_suggest::data::{generate_synthetic, SyntheticConfig};
use price_suggest::objectives::ConstraintConfig;
use price_suggest::trainer::{evaluate_split, train_model, Prepared, TrainingConfig};

fn main() -> price_suggest::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let delta: f64 = args.next().map_or(0.6, |a| a.parse().expect("delta"));
    let scale: f64 = args.next().map_or(1.0, |a| a.parse().expect("epoch scale"));

    let (dataset, _) = generate_synthetic(&SyntheticConfig::default())?;
    let mut cfg = TrainingConfig {
        constraint: ConstraintConfig::percentile(delta, 1.0),
        ..TrainingConfig::default()
    };
    cfg.epochs_phase1 = (cfg.epochs_phase1 as f64 * scale).round() as usize;
    cfg.epochs_phase2 = (cfg.epochs_phase2 as f64 * scale).round() as usize;
    let prepared = Prepared::new(&dataset, &cfg)?;

    let start = Instant::now();
    let outcome = train_model(&prepared, &cfg)?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    for r in outcome.history.epochs.iter().step_by(10) {
        println!(
            "epoch {:>3}  objective {:.4}  positive {:.3}  positive loss {:.4}",
            r.epoch, r.objective, r.positive_fraction, r.positive_mean_loss
        );
    }

    let m = &outcome.model;
    let report = evaluate_split(m.classifier.as_ref(), &m.regressor, &prepared.test, &m.range, m.ablation)?;
    println!("test positive fraction {:.3}", report.positive_fraction);
    println!("positive SMLE {:.4}  UMLE {:.4}", report.positive.smle, report.positive.umle);
    println!("negative SMLE {:.4}  UMLE {:.4}", report.negative.smle, report.negative.umle);
    Ok(())
}
