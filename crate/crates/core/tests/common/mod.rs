#![allow(dead_code)]

pub mod gradient_suite;
pub mod metrics_oracle;

use ndarray::Array2;
use price_suggest::data::{generate_synthetic, Dataset, SyntheticConfig};
use price_suggest::features::{pad_or_truncate, InputBatch, STAT_DIM};
use price_suggest::model::Architecture;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_arch() -> Architecture {
    Architecture {
        visual_dim: 4,
        vocab_size: 12,
        embed_dim: 2,
        hidden_sizes: vec![6, 5],
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, arch: &Architecture, n: usize) -> InputBatch {
    InputBatch {
        visual: Array2::from_shape_simple_fn((n, arch.visual_dim), || rng.random_range(-1.5..1.5)),
        tokens: (0..n)
            .map(|_| {
                let len = rng.random_range(0..40);
                let ids: Vec<u32> = (0..len)
                    .map(|_| rng.random_range(0..arch.vocab_size as u32))
                    .collect();
                pad_or_truncate(&ids, arch.vocab_size).unwrap()
            })
            .collect(),
        stats: Array2::from_shape_simple_fn((n, STAT_DIM), || rng.random_range(-1.5..1.5)),
    }
}

/// A few hundred items with small dimensions.
pub fn small_dataset(n_items: usize, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        n_items,
        vocab_size: 200,
        visual_dim: 8,
        n_categories: 4,
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).unwrap().0
}
