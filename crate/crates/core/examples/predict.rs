//! Trains a small model, saves it, loads it back and prints suggestions
//! for a handful of new listings.
//!
//! `cargo run --release --example predict`

use price_suggest::data::{generate_synthetic, inverse_log_transform, QualityHint, SyntheticConfig};
use price_suggest::model::{load_model, predict_items, save_model};
use price_suggest::trainer::{train_model, Prepared, PreparedSplit, TrainingConfig};

fn main() -> price_suggest::Result<()> {
    let (history, _) = generate_synthetic(&SyntheticConfig {
        n_items: 4000,
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainingConfig::default();
    let prepared = Prepared::new(&history, &cfg)?;
    let model = train_model(&prepared, &cfg)?.model;

    let dir = std::env::temp_dir().join("price-suggest-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.json");
    save_model(&model, &path)?;
    let model = load_model(&path)?;

    // New listings from the same marketplace.
    let (fresh, _) = generate_synthetic(&SyntheticConfig {
        n_items: 12,
        seed: 99,
        ..SyntheticConfig::default()
    })?;
    let split = PreparedSplit::new(&fresh.items, &model.features)?;
    let preds = predict_items(model.classifier.as_ref(), &model.regressor, &split.batch, model.ablation)?;
    for (item, p) in fresh.items.iter().zip(&preds) {
        let truth = match item.quality_hint {
            Some(QualityHint::Qualified) => "qualified",
            _ => "unqualified",
        };
        if p.is_positive() {
            println!(
                "{:<10} {truth:<12} confidence {:.2}  suggest {:>8.2} CHN (actual {:.2})",
                item.id,
                p.confidence,
                inverse_log_transform(p.suggested_log_price),
                inverse_log_transform(item.log_price)
            );
        } else {
            println!("{:<10} {truth:<12} confidence {:.2}  update encouraged", item.id, p.confidence);
        }
    }
    Ok(())
}
