//! Generates a synthetic marketplace, summarizes it, and writes it as JSONL.
//!
//! `cargo run --release --example gen_data -- [out.jsonl] [n_items]`

use price_suggest::data::{
    generate_synthetic, save_dataset, skewness, status_counts, QualityHint, SaveOptions, SyntheticConfig,
};

fn main() -> price_suggest::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic.jsonl".into());
    let n_items: usize = args.next().map_or(20_000, |a| a.parse().expect("n_items"));

    let cfg = SyntheticConfig {
        n_items,
        ..SyntheticConfig::default()
    };
    let (data, truth) = generate_synthetic(&cfg)?;
    let (sold, unsold) = status_counts(&data.items);
    let unqualified = data
        .items
        .iter()
        .filter(|r| r.quality_hint == Some(QualityHint::Unqualified))
        .count();
    println!("{} items: {sold} sold, {unsold} unsold, {unqualified} unqualified", data.items.len());

    let logs: Vec<f64> = data.items.iter().map(|r| r.log_price).collect();
    let raw: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    println!("skewness: raw price {:.2}, log price {:.2}", skewness(&raw), skewness(&logs));
    let offsets: Vec<String> = truth.category_offsets.iter().map(|v| format!("{v:.2}")).collect();
    println!("category log-price offsets: {}", offsets.join(" "));

    let first = &data.items[0];
    println!(
        "first item {} ({}): {:?}, log price {:.3}, tokens {:?}",
        first.id,
        first.category,
        first.status,
        first.log_price,
        first.tokens.trimmed()
    );

    // The qualified flag is kept so `evaluate` can report the correlation.
    save_dataset(&data, out.as_ref(), SaveOptions { keep_quality_hint: true })?;
    println!("wrote {out}");
    Ok(())
}
