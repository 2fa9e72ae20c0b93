//! Checks the regressor's backpropagated gradient against central finite
//! differences at one random point.
//!
//! `cargo run --example gradient_check`

use ndarray::Array2;
use price_suggest::features::{pad_or_truncate, Ablation, InputBatch, STAT_DIM};
use price_suggest::model::{Architecture, HeadKind, HeadParams};
use price_suggest::numeric::GradientCheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> price_suggest::Result<()> {
    let arch = Architecture {
        visual_dim: 6,
        vocab_size: 30,
        embed_dim: 3,
        hidden_sizes: vec![10, 6],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = HeadParams::init(HeadKind::Regressor, &arch, &mut rng);
    let n = 4;
    let batch = InputBatch {
        visual: Array2::from_shape_simple_fn((n, arch.visual_dim), || rng.random_range(-1.0..1.0)),
        tokens: (0..n)
            .map(|_| {
                let ids: Vec<u32> = (0..10).map(|_| rng.random_range(1..30)).collect();
                pad_or_truncate(&ids, arch.vocab_size)
            })
            .collect::<price_suggest::Result<_>>()?,
        stats: Array2::from_shape_simple_fn((n, STAT_DIM), || rng.random_range(-1.0..1.0)),
    };

    // Gradient of the summed outputs.
    let cache = head.forward(&batch, Ablation::None)?;
    println!("smallest |ReLU pre-activation| {:.2e}", cache.min_abs_preactivation());
    let analytic = head.backward(&cache, &vec![1.0; n])?.flatten();

    let mut probe = head.clone();
    let report = GradientCheck::default().run(
        |theta| {
            probe.set_flat(theta).expect("same length");
            probe.predict(&batch, Ablation::None).expect("finite").sum()
        },
        &head.flatten(),
        &analytic,
    );
    println!(
        "{} parameters, worst relative error {:.2e} at index {:?} (analytic {:.6}, numeric {:.6})",
        report.checked,
        report.max_rel_error,
        report.worst_index,
        report.analytic_at_worst,
        report.numeric_at_worst
    );
    println!("{}", if report.passed(1e-4) { "pass" } else { "FAIL" });
    Ok(())
}
