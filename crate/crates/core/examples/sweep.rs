//! Experiment sweeps on the default synthetic dataset, printed as CSV.
//!
//! ```text
//! cargo run --release --example sweep -- percentile 0.4,0.5,0.6
//! cargo run --release --example sweep -- threshold 0.10,0.15,0.20
//! cargo run --release --example sweep -- ablation percentile
//! ```

use price_suggest::data::{generate_synthetic, SyntheticConfig};
use price_suggest::features::Ablation;
use price_suggest::objectives::ConstraintConfig;
use price_suggest::trainer::{run_experiment_suite, Prepared, Sweep, TrainingConfig};

fn parse_list(arg: Option<String>, default: &[f64]) -> Vec<f64> {
    arg.map_or_else(
        || default.to_vec(),
        |s| s.split(',').map(|v| v.trim().parse().expect("number")).collect(),
    )
}

fn main() -> price_suggest::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let kind = args.next().unwrap_or_else(|| "percentile".into());
    let mut cfg = TrainingConfig::default();
    let sweep = match kind.as_str() {
        "percentile" => Sweep::Percentile {
            deltas: parse_list(args.next(), &[0.4, 0.5, 0.6, 0.7, 0.8]),
        },
        "threshold" => Sweep::Threshold {
            epsilons: parse_list(args.next(), &[0.1, 0.125, 0.15, 0.175, 0.2]),
        },
        "ablation" => {
            if args.next().as_deref() == Some("threshold") {
                cfg.constraint = ConstraintConfig::threshold(0.15, 1.0);
            }
            Sweep::Ablation {
                ablations: vec![Ablation::NoAttention, Ablation::NoImage, Ablation::NoText],
            }
        }
        other => panic!("unknown sweep kind {other}"),
    };

    let (dataset, _) = generate_synthetic(&SyntheticConfig::default())?;
    let prepared = Prepared::new(&dataset, &cfg)?;
    let table = run_experiment_suite(&prepared, &cfg, &sweep)?;
    table.write_csv(std::io::stdout())?;
    Ok(())
}
