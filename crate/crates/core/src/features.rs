//! Model input assembly: token padding, learned text embedding, attention
//! fusion of the visual and textual blocks, and the marketplace price
//! statistics appended to every input.
//!
//! Input layout is `[visual | textual | statistics]` where the textual block
//! is the 32 token embeddings concatenated in order and the statistics block
//! has [`STAT_DIM`] standardized entries.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ItemRecord, Status};
use crate::error::{Error, Result};
use crate::numeric::{softmax, DenseGrads, DenseLayer};

/// Number of token slots per description.
pub const TOKEN_LEN: usize = 32;
/// Length of the statistical feature block.
pub const STAT_DIM: usize = 16;

/// Exactly [`TOKEN_LEN`] token ids; `0` is padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenVector([u32; TOKEN_LEN]);

impl TokenVector {
    pub fn ids(&self) -> &[u32; TOKEN_LEN] {
        &self.0
    }

    /// The ids with trailing padding removed.
    pub fn trimmed(&self) -> &[u32] {
        let end = self.0.iter().rposition(|&t| t != 0).map_or(0, |i| i + 1);
        &self.0[..end]
    }

    pub fn padding_count(&self) -> usize {
        self.0.iter().filter(|&&t| t == 0).count()
    }
}

/// Right-pads with `0` or keeps the first [`TOKEN_LEN`] ids.
pub fn pad_or_truncate(tokens: &[u32], vocab_size: usize) -> Result<TokenVector> {
    let mut ids = [0u32; TOKEN_LEN];
    for (slot, &id) in ids.iter_mut().zip(tokens) {
        if id as usize >= vocab_size {
            return Err(Error::TokenOutOfRange { id, vocab_size });
        }
        *slot = id;
    }
    // Ids past the cut are dropped but must still be valid.
    if let Some(&id) = tokens.iter().skip(TOKEN_LEN).find(|&&id| id as usize >= vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab_size });
    }
    Ok(TokenVector(ids))
}

/// Learned token embeddings. Row 0 is the padding row and stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    table: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(table: Array2<f64>) -> Result<Self> {
        if table.nrows() == 0 || table.ncols() == 0 {
            return Err(Error::InvalidConfig("embedding table must be non-empty".into()));
        }
        if table.row(0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidConfig("embedding padding row must be zero".into()));
        }
        if !table.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        Ok(Self { table })
    }

    /// Uniform in `±0.05`, padding row zero.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-0.05, 0.05).expect("valid range");
        let mut table = Array2::from_shape_simple_fn((vocab_size, dim), || dist.sample(rng));
        table.row_mut(0).fill(0.0);
        Self { table }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    /// Mutable access to the trainable rows (everything but padding).
    pub fn trainable_rows_mut(&mut self) -> &mut [f64] {
        let dim = self.dim();
        &mut self.table.as_slice_mut().expect("standard layout")[dim..]
    }

    pub fn embed(&self, tokens: &TokenVector) -> Array1<f64> {
        self.embed_batch(std::slice::from_ref(tokens)).row(0).to_owned()
    }

    /// One row of `TOKEN_LEN * dim` per description.
    pub fn embed_batch(&self, tokens: &[TokenVector]) -> Array2<f64> {
        let dim = self.dim();
        let mut out = Array2::zeros((tokens.len(), TOKEN_LEN * dim));
        for (mut row, tv) in out.outer_iter_mut().zip(tokens) {
            for (pos, &id) in tv.ids().iter().enumerate() {
                if id != 0 {
                    row.slice_mut(s![pos * dim..(pos + 1) * dim])
                        .assign(&self.table.row(id as usize));
                }
            }
        }
        out
    }

    /// Scatters textual-block gradients back onto the table rows. The
    /// padding row never receives gradient.
    pub fn accumulate_grads(
        &self,
        tokens: &[TokenVector],
        grad_textual: ArrayView2<f64>,
        grad_table: &mut Array2<f64>,
    ) {
        let dim = self.dim();
        for (row, tv) in grad_textual.outer_iter().zip(tokens) {
            for (pos, &id) in tv.ids().iter().enumerate() {
                if id != 0 {
                    let mut target = grad_table.row_mut(id as usize);
                    target += &row.slice(s![pos * dim..(pos + 1) * dim]);
                }
            }
        }
    }
}

/// Projects `concat(visual, textual)` to two logits whose softmax weights
/// the two blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionLayer {
    projection: DenseLayer,
}

impl FusionLayer {
    pub fn new(projection: DenseLayer) -> Result<Self> {
        if projection.out_dim() != 2 {
            return Err(Error::dims("fusion projection output", 2, projection.out_dim()));
        }
        Ok(Self { projection })
    }

    pub fn projection(&self) -> &DenseLayer {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut DenseLayer {
        &mut self.projection
    }

    pub fn in_dim(&self) -> usize {
        self.projection.in_dim()
    }

    /// Softmax attention weights, one `[visual, textual]` row per item.
    pub fn weights_batch(
        &self,
        visual: ArrayView2<f64>,
        textual: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let joined = ndarray::concatenate(Axis(1), &[visual, textual])
            .map_err(|_| Error::dims("fusion batch rows", visual.nrows(), textual.nrows()))?;
        let mut logits = self.projection.forward_batch(joined.view())?;
        for mut row in logits.outer_iter_mut() {
            let w = softmax(&[row[0], row[1]]);
            row[0] = w[0];
            row[1] = w[1];
        }
        Ok(logits)
    }
}

/// Weighted visual block, weighted textual block and the two weights.
pub fn attention_fuse(
    visual: ArrayView1<f64>,
    textual: ArrayView1<f64>,
    fusion: &FusionLayer,
) -> Result<(Array1<f64>, Array1<f64>, [f64; 2])> {
    if visual.len() + textual.len() != fusion.in_dim() {
        return Err(Error::dims(
            "fusion input",
            fusion.in_dim(),
            visual.len() + textual.len(),
        ));
    }
    let w = fusion.weights_batch(visual.insert_axis(Axis(0)), textual.insert_axis(Axis(0)))?;
    let (wv, wt) = (w[[0, 0]], w[[0, 1]]);
    Ok((visual.mapv(|v| v * wv), textual.mapv(|t| t * wt), [wv, wt]))
}

/// First, second, third quartile and mean of a set of log prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub mean: f64,
}

impl Quartiles {
    /// `None` for an empty sample.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            q1: quantile_sorted(&sorted, 0.25),
            q2: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        })
    }

    fn to_array(self) -> [f64; 4] {
        [self.q1, self.q2, self.q3, self.mean]
    }
}

/// Linear interpolation between closest ranks, `h = (n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sold-price and unsold-listing-price statistics of one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatBlock {
    pub sold: Quartiles,
    pub unsold: Quartiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub block: StatBlock,
    /// The category had no sold items; `block.sold` is the global one.
    pub sold_fallback: bool,
    /// The category had no unsold items; `block.unsold` is the global one.
    pub unsold_fallback: bool,
}

/// The 16 statistical features of one item, before standardization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticalFeatures {
    pub global: StatBlock,
    pub category: StatBlock,
}

impl StatisticalFeatures {
    /// Global sold, global unsold, category sold, category unsold; each as
    /// Q1, Q2, Q3, mean.
    pub fn to_array(&self) -> [f64; STAT_DIM] {
        let mut out = [0.0; STAT_DIM];
        let parts = [
            self.global.sold,
            self.global.unsold,
            self.category.sold,
            self.category.unsold,
        ];
        for (chunk, q) in out.chunks_mut(4).zip(parts) {
            chunk.copy_from_slice(&q.to_array());
        }
        out
    }
}

/// Global and per-category price statistics of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub global: StatBlock,
    pub categories: BTreeMap<String, CategoryStats>,
}

impl StatsTable {
    /// Unknown categories use the global block for both halves.
    pub fn features_for(&self, category: &str) -> StatisticalFeatures {
        let category = self
            .categories
            .get(category)
            .map_or(self.global, |c| c.block);
        StatisticalFeatures {
            global: self.global,
            category,
        }
    }
}

pub fn compute_statistical_features(corpus: &[ItemRecord]) -> Result<StatsTable> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut by_cat: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut sold, mut unsold) = (Vec::new(), Vec::new());
    for item in corpus {
        if !item.log_price.is_finite() {
            return Err(Error::NonFinite(format!("log price of item {}", item.id)));
        }
        let entry = by_cat.entry(item.category.as_str()).or_default();
        match item.status {
            Status::Sold => {
                sold.push(item.log_price);
                entry.0.push(item.log_price);
            }
            Status::Unsold => {
                unsold.push(item.log_price);
                entry.1.push(item.log_price);
            }
        }
    }
    // A corpus with only one status borrows the other half.
    let global_sold = Quartiles::from_values(&sold);
    let global_unsold = Quartiles::from_values(&unsold);
    let global = StatBlock {
        sold: global_sold.or(global_unsold).expect("non-empty corpus"),
        unsold: global_unsold.or(global_sold).expect("non-empty corpus"),
    };
    let categories = by_cat
        .into_iter()
        .map(|(name, (s, u))| {
            let cs = Quartiles::from_values(&s);
            let cu = Quartiles::from_values(&u);
            let stats = CategoryStats {
                block: StatBlock {
                    sold: cs.unwrap_or(global.sold),
                    unsold: cu.unwrap_or(global.unsold),
                },
                sold_fallback: cs.is_none(),
                unsold_fallback: cu.is_none(),
            };
            (name.to_owned(), stats)
        })
        .collect();
    Ok(StatsTable { global, categories })
}

/// Per-feature standardization to zero mean and unit variance. Constant
/// features map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[[f64; STAT_DIM]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("standardizer sample"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; STAT_DIM];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; STAT_DIM];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 0.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, row: &[f64; STAT_DIM]) -> [f64; STAT_DIM] {
        let mut out = [0.0; STAT_DIM];
        for (i, o) in out.iter_mut().enumerate() {
            if self.std[i] > 0.0 {
                *o = (row[i] - self.mean[i]) / self.std[i];
            }
        }
        out
    }
}

/// Statistics table plus standardization, fit on a training split and
/// reused for every later prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub stats: StatsTable,
    pub standardizer: Standardizer,
}

impl FeatureContext {
    pub fn fit(train: &[ItemRecord]) -> Result<Self> {
        let stats = compute_statistical_features(train)?;
        let rows: Vec<_> = train
            .iter()
            .map(|r| stats.features_for(&r.category).to_array())
            .collect();
        let standardizer = Standardizer::fit(&rows)?;
        Ok(Self {
            stats,
            standardizer,
        })
    }

    pub fn stat_vector(&self, category: &str) -> [f64; STAT_DIM] {
        self.standardizer
            .transform(&self.stats.features_for(category).to_array())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NoImage,
    NoText,
    NoAttention,
}

impl Ablation {
    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "Ours",
            Ablation::NoImage => "Ours W/O image",
            Ablation::NoText => "Ours W/O text",
            Ablation::NoAttention => "Ours W/O attention",
        }
    }
}

/// Raw per-item inputs for a batch: visual vectors, token vectors and the
/// standardized statistics rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub visual: Array2<f64>,
    pub tokens: Vec<TokenVector>,
    pub stats: Array2<f64>,
}

impl InputBatch {
    pub fn from_records(records: &[ItemRecord], ctx: &FeatureContext) -> Result<Self> {
        let visual_dim = records.first().map_or(0, |r| r.visual.len());
        let mut visual = Array2::zeros((records.len(), visual_dim));
        let mut stats = Array2::zeros((records.len(), STAT_DIM));
        for (i, r) in records.iter().enumerate() {
            if r.visual.len() != visual_dim {
                return Err(Error::dims(
                    format!("visual vector of item {}", r.id),
                    visual_dim,
                    r.visual.len(),
                ));
            }
            visual.row_mut(i).assign(&ArrayView1::from(&r.visual));
            stats
                .row_mut(i)
                .assign(&ArrayView1::from(&ctx.stat_vector(&r.category)));
        }
        Ok(Self {
            visual,
            tokens: records.iter().map(|r| r.tokens).collect(),
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            visual: self.visual.select(Axis(0), indices),
            tokens: indices.iter().map(|&i| self.tokens[i]).collect(),
            stats: self.stats.select(Axis(0), indices),
        }
    }
}

/// Intermediate values of [`assemble_batch`] needed for the backward pass.
#[derive(Debug, Clone)]
pub struct Assembled {
    /// Model input rows.
    pub input: Array2<f64>,
    /// Visual block after ablation, before weighting.
    pub visual: Array2<f64>,
    /// Textual block after ablation, before weighting.
    pub textual: Array2<f64>,
    /// Attention weights, absent under [`Ablation::NoAttention`].
    pub weights: Option<Array2<f64>>,
}

pub fn assemble_batch(
    batch: &InputBatch,
    embedding: &EmbeddingTable,
    fusion: &FusionLayer,
    ablation: Ablation,
) -> Result<Assembled> {
    let n = batch.len();
    let vd = batch.visual.ncols();
    if vd + TOKEN_LEN * embedding.dim() != fusion.in_dim() {
        return Err(Error::dims(
            "fusion input (visual + textual)",
            fusion.in_dim(),
            vd + TOKEN_LEN * embedding.dim(),
        ));
    }
    if batch.stats.ncols() != STAT_DIM || batch.stats.nrows() != n || batch.visual.nrows() != n {
        return Err(Error::dims("statistics block", STAT_DIM, batch.stats.ncols()));
    }
    for tv in &batch.tokens {
        if let Some(&id) = tv.ids().iter().find(|&&id| id as usize >= embedding.vocab_size()) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: embedding.vocab_size(),
            });
        }
    }
    let visual = if ablation == Ablation::NoImage {
        Array2::zeros(batch.visual.raw_dim())
    } else {
        batch.visual.clone()
    };
    let textual = if ablation == Ablation::NoText {
        Array2::zeros((n, TOKEN_LEN * embedding.dim()))
    } else {
        embedding.embed_batch(&batch.tokens)
    };
    let td = textual.ncols();
    let mut input = Array2::zeros((n, vd + td + STAT_DIM));
    let weights = if ablation == Ablation::NoAttention {
        input.slice_mut(s![.., ..vd]).assign(&visual);
        input.slice_mut(s![.., vd..vd + td]).assign(&textual);
        None
    } else {
        let w = fusion.weights_batch(visual.view(), textual.view())?;
        for i in 0..n {
            let (wv, wt) = (w[[i, 0]], w[[i, 1]]);
            input
                .slice_mut(s![i, ..vd])
                .assign(&visual.row(i).mapv(|v| v * wv));
            input
                .slice_mut(s![i, vd..vd + td])
                .assign(&textual.row(i).mapv(|t| t * wt));
        }
        Some(w)
    };
    input.slice_mut(s![.., vd + td..]).assign(&batch.stats);
    Ok(Assembled {
        input,
        visual,
        textual,
        weights,
    })
}

/// Gradients of the feature front end: `(embedding table grad, fusion grads)`.
pub fn assemble_backward(
    assembled: &Assembled,
    tokens: &[TokenVector],
    grad_input: ArrayView2<f64>,
    embedding: &EmbeddingTable,
    fusion: &FusionLayer,
    ablation: Ablation,
) -> Result<(Array2<f64>, DenseGrads)> {
    let vd = assembled.visual.ncols();
    let td = assembled.textual.ncols();
    if grad_input.ncols() != assembled.input.ncols() || grad_input.nrows() != tokens.len() {
        return Err(Error::dims(
            "assembled input gradient",
            assembled.input.ncols(),
            grad_input.ncols(),
        ));
    }
    let g_vis = grad_input.slice(s![.., ..vd]);
    let g_txt = grad_input.slice(s![.., vd..vd + td]);

    let mut grad_table = Array2::zeros(embedding.table().raw_dim());
    let (grad_textual, fusion_grads) = match &assembled.weights {
        None => (g_txt.to_owned(), DenseGrads::zeros(fusion.in_dim(), 2)),
        Some(w) => {
            let n = w.nrows();
            // d(weight_k) = <upstream block k, raw block k>, then through softmax.
            let mut d_logits = Array2::zeros((n, 2));
            for i in 0..n {
                let dwv = g_vis.row(i).dot(&assembled.visual.row(i));
                let dwt = g_txt.row(i).dot(&assembled.textual.row(i));
                let (a0, a1) = (w[[i, 0]], w[[i, 1]]);
                let mean = a0 * dwv + a1 * dwt;
                d_logits[[i, 0]] = a0 * (dwv - mean);
                d_logits[[i, 1]] = a1 * (dwt - mean);
            }
            let joined = ndarray::concatenate(
                Axis(1),
                &[assembled.visual.view(), assembled.textual.view()],
            )
            .expect("matching rows");
            let (fg, g_joined) = fusion.projection().backward_batch(joined.view(), d_logits.view())?;
            let mut gt = g_joined.slice(s![.., vd..]).to_owned();
            for i in 0..n {
                let wt = w[[i, 1]];
                let mut row = gt.row_mut(i);
                row.scaled_add(wt, &g_txt.row(i));
            }
            (gt, fg)
        }
    };
    if ablation != Ablation::NoText {
        embedding.accumulate_grads(tokens, grad_textual.view(), &mut grad_table);
    }
    Ok((grad_table, fusion_grads))
}

/// Model input for one record.
pub fn assemble_input(
    record: &ItemRecord,
    embedding: &EmbeddingTable,
    fusion: &FusionLayer,
    ctx: &FeatureContext,
    ablation: Ablation,
) -> Result<Array1<f64>> {
    let batch = InputBatch::from_records(std::slice::from_ref(record), ctx)?;
    let assembled = assemble_batch(&batch, embedding, fusion, ablation)?;
    Ok(assembled.input.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Status;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, category: &str, status: Status, log_price: f64) -> ItemRecord {
        ItemRecord {
            id: id.into(),
            category: category.into(),
            visual: vec![0.0; 2],
            tokens: pad_or_truncate(&[], 10).unwrap(),
            status,
            log_price,
            quality_hint: None,
        }
    }

    #[test]
    fn padding_and_truncation() {
        let tv = pad_or_truncate(&[5, 7], 100).unwrap();
        assert_eq!(tv.ids()[..2], [5, 7]);
        assert!(tv.ids()[2..].iter().all(|&t| t == 0));

        let long: Vec<u32> = (1..=40).collect();
        let tv = pad_or_truncate(&long, 100).unwrap();
        assert_eq!(tv.ids().to_vec(), (1..=32).collect::<Vec<u32>>());

        let tv = pad_or_truncate(&[], 100).unwrap();
        assert!(tv.ids().iter().all(|&t| t == 0));
        assert_eq!(tv.padding_count(), TOKEN_LEN);

        assert!(matches!(
            pad_or_truncate(&[3, 100], 100),
            Err(Error::TokenOutOfRange { id: 100, .. })
        ));
    }

    #[test]
    fn embedding_lookup() {
        let table = EmbeddingTable::new(array![[0.0], [2.0], [3.0]]).unwrap();
        let tv = pad_or_truncate(&[1, 2], 3).unwrap();
        let e = table.embed(&tv);
        assert_eq!(e.len(), TOKEN_LEN);
        assert_eq!(e[0], 2.0);
        assert_eq!(e[1], 3.0);
        assert!(e.iter().skip(2).all(|&v| v == 0.0));

        let pad = table.embed(&pad_or_truncate(&[], 3).unwrap());
        assert!(pad.iter().all(|&v| v == 0.0));

        let same = table.embed(&pad_or_truncate(&[2; 32], 3).unwrap());
        assert!(same.iter().all(|&v| v == 3.0));

        assert!(EmbeddingTable::new(array![[1.0], [2.0]]).is_err());
    }

    #[test]
    fn padding_row_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = EmbeddingTable::random(6, 3, &mut rng);
        let tokens = vec![pad_or_truncate(&[1, 0, 5], 6).unwrap()];
        let g = Array2::from_elem((1, TOKEN_LEN * 3), 1.0);
        let mut grad = Array2::zeros((6, 3));
        table.accumulate_grads(&tokens, g.view(), &mut grad);
        assert!(grad.row(0).iter().all(|&v| v == 0.0));
        assert!(grad.row(1).iter().all(|&v| v == 1.0));
        assert!(grad.row(5).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn attention_examples() {
        // Equal logits.
        let fusion = FusionLayer::new(DenseLayer::zeros(4, 2)).unwrap();
        let (wv, wt, w) = attention_fuse(
            array![2.0, 4.0].view(),
            array![6.0, -2.0].view(),
            &fusion,
        )
        .unwrap();
        assert_eq!(w, [0.5, 0.5]);
        assert_eq!(wv, array![1.0, 2.0]);
        assert_eq!(wt, array![3.0, -1.0]);

        // Saturated logits [+20, -20].
        let sat = FusionLayer::new(
            DenseLayer::new(Array2::zeros((2, 4)), array![20.0, -20.0]).unwrap(),
        )
        .unwrap();
        let (wv, wt, w) =
            attention_fuse(array![1.0, 1.0].view(), array![1.0, 1.0].view(), &sat).unwrap();
        assert!(w[0] > 1.0 - 1e-15);
        assert_abs_diff_eq!(wv[0], 1.0, epsilon = 1e-15);
        assert!(wt.iter().all(|v| v.abs() < 1e-17));

        // Zero inputs with zero bias but arbitrary weights.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fusion = FusionLayer::new(DenseLayer::glorot_uniform(4, 2, &mut rng)).unwrap();
        let (_, _, w) =
            attention_fuse(array![0.0, 0.0].view(), array![0.0, 0.0].view(), &fusion).unwrap();
        assert_eq!(w, [0.5, 0.5]);

        assert!(FusionLayer::new(DenseLayer::zeros(4, 3)).is_err());
    }

    #[test]
    fn quartile_examples() {
        let q = Quartiles::from_values(&[4.0, 2.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(q.q1, 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q2, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q3, 3.25, epsilon = 1e-15);
        assert_abs_diff_eq!(q.mean, 2.5, epsilon = 1e-15);

        let q = Quartiles::from_values(&[1.7]).unwrap();
        assert_eq!((q.q1, q.q2, q.q3, q.mean), (1.7, 1.7, 1.7, 1.7));
        assert!(Quartiles::from_values(&[]).is_none());
    }

    #[test]
    fn statistics_per_category_and_fallback() {
        let corpus = vec![
            record("a", "x", Status::Sold, 1.0),
            record("b", "x", Status::Sold, 2.0),
            record("c", "x", Status::Unsold, 3.0),
            record("d", "y", Status::Sold, 1.0),
            record("e", "y", Status::Sold, 2.0),
            record("f", "y", Status::Unsold, 3.0),
            record("g", "z", Status::Sold, 5.0),
        ];
        let table = compute_statistical_features(&corpus).unwrap();
        let x = table.categories["x"];
        let y = table.categories["y"];
        assert_eq!(x, y);
        let z = table.categories["z"];
        assert!(!z.sold_fallback && z.unsold_fallback);
        assert_eq!(z.block.unsold, table.global.unsold);
        assert_eq!(z.block.sold.q2, 5.0);

        let f = table.features_for("x").to_array();
        assert_eq!(f[0..4], table.global.sold.to_array());
        assert_eq!(f[12..16], [3.0; 4]);
        // Unknown category falls back to the global block.
        let u = table.features_for("unknown").to_array();
        assert_eq!(u[..8], u[8..]);

        assert!(compute_statistical_features(&[]).is_err());
    }

    #[test]
    fn standardizer_zeroes_constant_columns() {
        let mut rows = vec![[1.0; STAT_DIM], [1.0; STAT_DIM]];
        rows[0][3] = 0.0;
        rows[1][3] = 2.0;
        let s = Standardizer::fit(&rows).unwrap();
        let t = s.transform(&rows[1]);
        assert_eq!(t[0], 0.0);
        assert_abs_diff_eq!(t[3], 1.0, epsilon = 1e-15);
    }

    fn toy_batch(rng: &mut ChaCha8Rng) -> (InputBatch, EmbeddingTable, FusionLayer) {
        let embedding = EmbeddingTable::random(10, 2, rng);
        let fusion = FusionLayer::new(DenseLayer::glorot_uniform(3 + TOKEN_LEN * 2, 2, rng)).unwrap();
        let batch = InputBatch {
            visual: Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0)),
            tokens: vec![
                pad_or_truncate(&[1, 2, 3], 10).unwrap(),
                pad_or_truncate(&[9, 9], 10).unwrap(),
            ],
            stats: Array2::from_shape_simple_fn((2, STAT_DIM), || rng.random_range(-1.0..1.0)),
        };
        (batch, embedding, fusion)
    }

    #[test]
    fn ablations_shape_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (batch, embedding, fusion) = toy_batch(&mut rng);
        let full = assemble_batch(&batch, &embedding, &fusion, Ablation::None).unwrap();
        assert_eq!(full.input.ncols(), 3 + TOKEN_LEN * 2 + STAT_DIM);

        let no_img = assemble_batch(&batch, &embedding, &fusion, Ablation::NoImage).unwrap();
        assert!(no_img.input.slice(s![.., ..3]).iter().all(|&v| v == 0.0));
        assert_eq!(
            no_img.input.slice(s![.., 3 + 64..]),
            full.input.slice(s![.., 3 + 64..])
        );

        let no_att = assemble_batch(&batch, &embedding, &fusion, Ablation::NoAttention).unwrap();
        assert!(no_att.weights.is_none());
        assert_eq!(no_att.input.slice(s![.., ..3]), batch.visual);
        assert_eq!(
            no_att.input.slice(s![.., 3..3 + 64]),
            embedding.embed_batch(&batch.tokens)
        );

        let no_txt = assemble_batch(&batch, &embedding, &fusion, Ablation::NoText).unwrap();
        assert!(no_txt.input.slice(s![.., 3..3 + 64]).iter().all(|&v| v == 0.0));
    }
}
