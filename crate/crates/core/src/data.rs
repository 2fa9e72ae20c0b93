//! Item records, the log-price transform, dataset files, splitting and the
//! synthetic marketplace generator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{pad_or_truncate, TokenVector};

/// Current dataset file layout.
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Sold,
    Unsold,
}

/// Generator ground truth; never part of model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityHint {
    Qualified,
    Unqualified,
}

/// One listing. `log_price` is the sold price for sold items and the
/// listing price for unsold ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub id: String,
    pub category: String,
    pub visual: Vec<f64>,
    pub tokens: TokenVector,
    pub status: Status,
    pub log_price: f64,
    pub quality_hint: Option<QualityHint>,
}

pub fn log_transform(price: f64) -> Result<f64> {
    if !(price > 0.0) || !price.is_finite() {
        return Err(Error::NonPositivePrice(price));
    }
    Ok(price.ln())
}

pub fn inverse_log_transform(log_price: f64) -> f64 {
    log_price.exp()
}

/// Sample skewness `m3 / m2^1.5`.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    visual_dim: usize,
    vocab_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    id: String,
    category: String,
    visual: Vec<f64>,
    tokens: Vec<u32>,
    status: Status,
    log_price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality_hint: Option<QualityHint>,
}

/// A loaded dataset together with the dimensions declared in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub visual_dim: usize,
    pub vocab_size: usize,
    pub items: Vec<ItemRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SaveOptions {
    /// Keep generator ground truth in the file (debugging only).
    pub keep_quality_hint: bool,
}

pub fn save_dataset(dataset: &Dataset, path: &Path, opts: SaveOptions) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        schema_version: DATASET_SCHEMA_VERSION,
        visual_dim: dataset.visual_dim,
        vocab_size: dataset.vocab_size,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for item in &dataset.items {
        let line = Line {
            id: item.id.clone(),
            category: item.category.clone(),
            visual: item.visual.clone(),
            tokens: item.tokens.trimmed().to_vec(),
            status: item.status,
            log_price: item.log_price,
            quality_hint: item.quality_hint.filter(|_| opts.keep_quality_hint),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset file. An empty file is an empty dataset.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => {
                return Ok(Dataset {
                    visual_dim: 0,
                    vocab_size: 0,
                    items: Vec::new(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| parse_err(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: header.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    let mut items = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let no = i + 1;
        let raw: Line = serde_json::from_str(&line).map_err(|e| parse_err(no, e.to_string()))?;
        if raw.visual.len() != header.visual_dim {
            return Err(parse_err(
                no,
                format!(
                    "visual vector has {} entries, header declares {}",
                    raw.visual.len(),
                    header.visual_dim
                ),
            ));
        }
        if !raw.log_price.is_finite() || !raw.visual.iter().all(|v| v.is_finite()) {
            return Err(parse_err(no, "non-finite value".into()));
        }
        let tokens = pad_or_truncate(&raw.tokens, header.vocab_size)
            .map_err(|e| parse_err(no, e.to_string()))?;
        items.push(ItemRecord {
            id: raw.id,
            category: raw.category,
            visual: raw.visual,
            tokens,
            status: raw.status,
            log_price: raw.log_price,
            quality_hint: raw.quality_hint,
        });
    }
    Ok(Dataset {
        visual_dim: header.visual_dim,
        vocab_size: header.vocab_size,
        items,
    })
}

/// Train, validation and test portions of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<ItemRecord>,
    pub val: Vec<ItemRecord>,
    pub test: Vec<ItemRecord>,
}

/// Default train/validation/test proportions.
pub const DEFAULT_SPLIT: [f64; 3] = [0.78, 0.04, 0.18];

/// Seeded shuffle followed by a cut into three disjoint parts.
pub fn split_dataset(items: &[ItemRecord], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::BadFractions(total));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = items.len() as f64;
    let n_train = ((n * fractions[0]).round() as usize).min(items.len());
    let n_val = ((n * fractions[1]).round() as usize).min(items.len() - n_train);
    let pick = |range: &[usize]| range.iter().map(|&i| items[i].clone()).collect();
    Ok(Splits {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

/// Parameters of the synthetic marketplace.
///
/// Every item has a latent attribute vector; its value is a category offset
/// plus a linear function of the attributes. Qualified items reveal the
/// attributes through quantized attribute tokens (richly) and through the
/// visual vector (partially, first half of the attributes). A share of
/// qualified items carry a corrupted image: a fixed offset plus noise.
/// Unqualified items reuse one of a few stock listings: a noise image
/// shared by many items (plus slight jitter) and a copied description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_items: usize,
    pub vocab_size: usize,
    pub visual_dim: usize,
    pub n_categories: usize,
    pub sold_fraction: f64,
    pub unqualified_fraction: f64,
    pub noise_scale_qualified: f64,
    pub noise_scale_unqualified: f64,
    pub latent_dim: usize,
    /// Bins per attribute token.
    pub token_bins: usize,
    /// Most free-text filler words appended to a qualified description.
    pub filler_tokens: usize,
    /// Fewest attributes a qualified description mentions.
    pub min_exposed: usize,
    pub bad_image_fraction: f64,
    /// Per-coordinate amplitude of the glare pattern on corrupted images.
    pub glare_strength: f64,
    /// Distinct stock images and descriptions shared by unqualified items.
    pub stock_listings: usize,
    /// Mean log value.
    pub price_level: f64,
    /// Standard deviation of the per-category log offsets.
    pub category_spread: f64,
    /// Standard deviation of the attribute-driven log value.
    pub value_spread: f64,
    /// Standard deviation of the observed log price around the value.
    pub price_noise: f64,
    /// Listing-over-value ratio of unsold items.
    pub listing_markup: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_items: 20_000,
            vocab_size: 1000,
            visual_dim: 64,
            n_categories: 16,
            sold_fraction: 0.68,
            unqualified_fraction: 0.4,
            noise_scale_qualified: 0.15,
            noise_scale_unqualified: 1.0,
            latent_dim: 8,
            token_bins: 16,
            filler_tokens: 4,
            min_exposed: 6,
            bad_image_fraction: 0.3,
            glare_strength: 0.5,
            stock_listings: 24,
            price_level: 1.6,
            category_spread: 0.25,
            value_spread: 0.45,
            price_noise: 0.12,
            listing_markup: 1.2,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        let in_open_unit = |f: f64| f > 0.0 && f < 1.0;
        if !in_open_unit(self.sold_fraction) {
            return bad("sold_fraction must be in (0, 1)");
        }
        if !in_open_unit(self.unqualified_fraction) {
            return bad("unqualified_fraction must be in (0, 1)");
        }
        if !(self.noise_scale_unqualified > self.noise_scale_qualified) {
            return bad("noise_scale_unqualified must exceed noise_scale_qualified");
        }
        if !(0.0..1.0).contains(&self.bad_image_fraction) {
            return bad("bad_image_fraction must be in [0, 1)");
        }
        if self.latent_dim == 0 || self.n_categories == 0 || self.visual_dim == 0 {
            return bad("latent_dim, n_categories and visual_dim must be positive");
        }
        if self.stock_listings == 0 {
            return bad("stock_listings must be positive");
        }
        if self.min_exposed == 0 || self.min_exposed > self.latent_dim {
            return bad("min_exposed must be in 1..=latent_dim");
        }
        if self.token_bins < 2 || 1 + self.latent_dim * (self.token_bins + 1) >= self.vocab_size {
            return bad("vocab_size too small for latent_dim * (token_bins + 1) attribute tokens");
        }
        if !(self.listing_markup >= 1.0) || self.price_noise < 0.0 {
            return bad("listing_markup must be >= 1 and price_noise >= 0");
        }
        Ok(())
    }
}

/// Fixed generator parameters drawn from the seed before any item.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTruth {
    pub category_offsets: Vec<f64>,
    pub value_weights: Vec<f64>,
    /// `visual_dim x (latent_dim / 2)` row-major.
    pub visual_loadings: Vec<f64>,
    pub glare_direction: Vec<f64>,
    /// Latent log value of every generated item, in item order.
    pub values: Vec<f64>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, GeneratorTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let k = cfg.latent_dim;
    let k_vis = k.div_ceil(2);
    let category_offsets: Vec<f64> = (0..cfg.n_categories)
        .map(|_| cfg.price_level + cfg.category_spread * normal(&mut rng))
        .collect();
    let raw_w: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
    let norm = raw_w.iter().map(|w| w * w).sum::<f64>().sqrt();
    let value_weights: Vec<f64> = raw_w.iter().map(|w| cfg.value_spread * w / norm).collect();
    let load_scale = 1.0 / (k_vis as f64).sqrt();
    let visual_loadings: Vec<f64> = (0..cfg.visual_dim * k_vis)
        .map(|_| load_scale * normal(&mut rng))
        .collect();
    let glare_direction: Vec<f64> = (0..cfg.visual_dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();

    // Ids 1.. are attribute bins, then one "unspecified" id per attribute,
    // then free words.
    let attr_ids = 1 + k * cfg.token_bins;
    let word_ids = attr_ids + k;
    let filler = |rng: &mut ChaCha8Rng| rng.random_range(word_ids as u32..cfg.vocab_size as u32);
    let stock: Vec<(Vec<f64>, Vec<u32>)> = (0..cfg.stock_listings)
        .map(|_| {
            let image = (0..cfg.visual_dim)
                .map(|_| cfg.noise_scale_unqualified * normal(&mut rng))
                .collect();
            let len = rng.random_range(0..=40);
            let text = (0..len)
                .map(|_| rng.random_range(1..cfg.vocab_size as u32))
                .collect();
            (image, text)
        })
        .collect();
    let markup = cfg.listing_markup.ln();
    let width = cfg.n_items.max(1).to_string().len();

    let mut items = Vec::with_capacity(cfg.n_items);
    let mut values = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let cat = rng.random_range(0..cfg.n_categories);
        let latent: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        let value = category_offsets[cat]
            + latent.iter().zip(&value_weights).map(|(a, w)| a * w).sum::<f64>();
        let qualified = rng.random::<f64>() >= cfg.unqualified_fraction;

        let (visual, raw_tokens) = if qualified {
            let visual = if rng.random::<f64>() < cfg.bad_image_fraction {
                glare_direction
                    .iter()
                    .map(|d| cfg.glare_strength * d + cfg.noise_scale_unqualified * normal(&mut rng))
                    .collect()
            } else {
                (0..cfg.visual_dim)
                    .map(|r| {
                        let row = &visual_loadings[r * k_vis..(r + 1) * k_vis];
                        row.iter().zip(&latent).map(|(l, a)| l * a).sum::<f64>()
                            + cfg.noise_scale_qualified * normal(&mut rng)
                    })
                    .collect()
            };
            let n_exposed = rng.random_range(cfg.min_exposed..=k);
            let mut exposed: Vec<usize> = (0..k).collect();
            exposed.shuffle(&mut rng);
            exposed.truncate(n_exposed);
            let mut tokens = Vec::with_capacity(40);
            for (j, a) in latent.iter().enumerate() {
                if exposed.contains(&j) {
                    let noisy = a + cfg.noise_scale_qualified * normal(&mut rng);
                    let bin = ((noisy + 2.5) / 5.0 * cfg.token_bins as f64)
                        .floor()
                        .clamp(0.0, (cfg.token_bins - 1) as f64) as usize;
                    tokens.push((1 + j * cfg.token_bins + bin) as u32);
                } else {
                    tokens.push((attr_ids + j) as u32);
                }
            }
            let extra = rng.random_range(0..=cfg.filler_tokens);
            tokens.extend((0..extra).map(|_| filler(&mut rng)));
            (visual, tokens)
        } else {
            let (image, text) = &stock[rng.random_range(0..stock.len())];
            let visual = image
                .iter()
                .map(|v| v + cfg.noise_scale_qualified * normal(&mut rng))
                .collect();
            (visual, text.clone())
        };

        let sold = rng.random::<f64>() < cfg.sold_fraction;
        let noise = cfg.price_noise * normal(&mut rng);
        let log_price = if sold { value + noise } else { value + markup + noise };
        values.push(value);
        items.push(ItemRecord {
            id: format!("item-{i:0width$}"),
            category: format!("cat-{cat:02}"),
            visual,
            tokens: pad_or_truncate(&raw_tokens, cfg.vocab_size)?,
            status: if sold { Status::Sold } else { Status::Unsold },
            log_price,
            quality_hint: Some(if qualified {
                QualityHint::Qualified
            } else {
                QualityHint::Unqualified
            }),
        });
    }
    let dataset = Dataset {
        visual_dim: cfg.visual_dim,
        vocab_size: cfg.vocab_size,
        items,
    };
    let truth = GeneratorTruth {
        category_offsets,
        value_weights,
        visual_loadings,
        glare_direction,
        values,
    };
    Ok((dataset, truth))
}

/// Sold and unsold counts.
pub fn status_counts(items: &[ItemRecord]) -> (usize, usize) {
    let sold = items.iter().filter(|r| r.status == Status::Sold).count();
    (sold, items.len() - sold)
}
