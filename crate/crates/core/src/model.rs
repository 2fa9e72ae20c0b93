//! The qualification classifier and the price regressor.
//!
//! Both heads share one architecture: feature front end (embedding and
//! attention fusion), ReLU hidden layers, and a single output unit. The
//! classifier applies a sigmoid to that unit, the regressor emits it as a
//! log price. The heads never share parameter storage.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    assemble_backward, assemble_batch, Ablation, Assembled, EmbeddingTable, FeatureContext,
    FusionLayer, InputBatch, TokenVector, STAT_DIM, TOKEN_LEN,
};
use crate::numeric::{sigmoid, AdamState, DenseGrads, DenseLayer, ParamBlock};
use crate::objectives::{hard_indicator, ConstraintConfig, RangeLossParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub visual_dim: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            visual_dim: 64,
            vocab_size: 1000,
            embed_dim: 8,
            hidden_sizes: vec![128, 64],
        }
    }
}

impl Architecture {
    pub fn textual_dim(&self) -> usize {
        TOKEN_LEN * self.embed_dim
    }

    /// Length of the assembled model input.
    pub fn input_dim(&self) -> usize {
        self.visual_dim + self.textual_dim() + STAT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual_dim == 0
            || self.vocab_size < 2
            || self.embed_dim == 0
            || self.hidden_sizes.contains(&0)
        {
            return Err(Error::InvalidConfig(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classifier,
    Regressor,
}

/// Parameters of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub embedding: EmbeddingTable,
    pub fusion: FusionLayer,
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
}

/// Gradients mirroring [`HeadParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub embedding: Array2<f64>,
    pub fusion: DenseGrads,
    pub hidden: Vec<DenseGrads>,
    pub output: DenseGrads,
}

impl HeadGrads {
    /// Flattened in the same order as [`HeadParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let dim = self.embedding.ncols();
        let mut out: Vec<f64> = self.embedding.iter().skip(dim).copied().collect();
        for g in std::iter::once(&self.fusion)
            .chain(&self.hidden)
            .chain(std::iter::once(&self.output))
        {
            out.extend(g.weights.iter());
            out.extend(g.bias.iter());
        }
        out
    }
}

/// Activations of one forward pass, consumed by [`HeadParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    kind: HeadKind,
    ablation: Ablation,
    tokens: Vec<TokenVector>,
    assembled: Assembled,
    pre_activations: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl ForwardCache {
    /// Confidences for the classifier, log prices for the regressor.
    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }

    pub fn assembled(&self) -> &Assembled {
        &self.assembled
    }

    /// Smallest `|z|` over hidden pre-activations; distance to a ReLU kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre_activations
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl HeadParams {
    /// Glorot-uniform layers, embedding uniform in `±0.05`, zero biases.
    pub fn init<R: Rng + ?Sized>(kind: HeadKind, arch: &Architecture, rng: &mut R) -> Self {
        let embedding = EmbeddingTable::random(arch.vocab_size, arch.embed_dim, rng);
        let fusion = FusionLayer::new(DenseLayer::glorot_uniform(
            arch.visual_dim + arch.textual_dim(),
            2,
            rng,
        ))
        .expect("two fusion outputs");
        let mut hidden = Vec::with_capacity(arch.hidden_sizes.len());
        let mut width = arch.input_dim();
        for &h in &arch.hidden_sizes {
            hidden.push(DenseLayer::glorot_uniform(width, h, rng));
            width = h;
        }
        let output = DenseLayer::glorot_uniform(width, 1, rng);
        Self {
            kind,
            embedding,
            fusion,
            hidden,
            output,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            visual_dim: self.fusion.in_dim() - TOKEN_LEN * self.embedding.dim(),
            vocab_size: self.embedding.vocab_size(),
            embed_dim: self.embedding.dim(),
            hidden_sizes: self.hidden.iter().map(DenseLayer::out_dim).collect(),
        }
    }

    /// Verifies every parameter block against `arch`.
    pub fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        let name = match self.kind {
            HeadKind::Classifier => "classifier",
            HeadKind::Regressor => "regressor",
        };
        let ctx = |what: &str| format!("{name} {what}");
        if self.embedding.vocab_size() != arch.vocab_size {
            return Err(Error::dims(ctx("embedding rows"), arch.vocab_size, self.embedding.vocab_size()));
        }
        if self.embedding.dim() != arch.embed_dim {
            return Err(Error::dims(ctx("embedding dim"), arch.embed_dim, self.embedding.dim()));
        }
        let fusion_in = arch.visual_dim + arch.textual_dim();
        if self.fusion.in_dim() != fusion_in {
            return Err(Error::dims(ctx("fusion input"), fusion_in, self.fusion.in_dim()));
        }
        if self.hidden.len() != arch.hidden_sizes.len() {
            return Err(Error::dims(ctx("hidden layer count"), arch.hidden_sizes.len(), self.hidden.len()));
        }
        let mut width = arch.input_dim();
        for (i, (layer, &h)) in self.hidden.iter().zip(&arch.hidden_sizes).enumerate() {
            if layer.in_dim() != width {
                return Err(Error::dims(ctx(&format!("hidden layer {i} input")), width, layer.in_dim()));
            }
            if layer.out_dim() != h {
                return Err(Error::dims(ctx(&format!("hidden layer {i} output")), h, layer.out_dim()));
            }
            width = h;
        }
        if self.output.in_dim() != width || self.output.out_dim() != 1 {
            return Err(Error::dims(ctx("output layer input"), width, self.output.in_dim()));
        }
        if self.embedding.table().row(0).iter().any(|&v| v != 0.0) {
            return Err(Error::ModelFormat(ctx("embedding padding row is not zero")));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(ctx("parameters")));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &InputBatch, ablation: Ablation) -> Result<ForwardCache> {
        let assembled = assemble_batch(batch, &self.embedding, &self.fusion, ablation)?;
        let mut pre_activations = Vec::with_capacity(self.hidden.len());
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let x = activations.last().unwrap_or(&assembled.input);
            let z = layer.forward_batch(x.view())?;
            activations.push(z.mapv(|v| v.max(0.0)));
            pre_activations.push(z);
        }
        let last = activations.last().unwrap_or(&assembled.input);
        let raw = self.output.forward_batch(last.view())?.column(0).to_owned();
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{:?} output", self.kind)));
        }
        let output = match self.kind {
            HeadKind::Classifier => raw.mapv(sigmoid),
            HeadKind::Regressor => raw,
        };
        Ok(ForwardCache {
            kind: self.kind,
            ablation,
            tokens: batch.tokens.clone(),
            assembled,
            pre_activations,
            activations,
            output,
        })
    }

    /// Outputs only.
    pub fn predict(&self, batch: &InputBatch, ablation: Ablation) -> Result<Array1<f64>> {
        Ok(self.forward(batch, ablation)?.output)
    }

    /// Gradients given `d objective / d output` per item.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<HeadGrads> {
        if cache.kind != self.kind {
            return Err(Error::StaleCache("cache belongs to the other head".into()));
        }
        if upstream.len() != cache.output.len() {
            return Err(Error::StaleCache(format!(
                "upstream has {} items, cache has {}",
                upstream.len(),
                cache.output.len()
            )));
        }
        if cache.pre_activations.len() != self.hidden.len()
            || cache.assembled.input.ncols() != self.architecture().input_dim()
        {
            return Err(Error::StaleCache("architecture differs from the cached pass".into()));
        }
        let n = upstream.len();
        let mut g = Array2::zeros((n, 1));
        for (i, (&u, &out)) in upstream.iter().zip(&cache.output).enumerate() {
            g[[i, 0]] = match self.kind {
                HeadKind::Classifier => u * out * (1.0 - out),
                HeadKind::Regressor => u,
            };
        }
        let last = cache.activations.last().unwrap_or(&cache.assembled.input);
        let (output_grads, mut g_h) = self.output.backward_batch(last.view(), g.view())?;

        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            g_h.zip_mut_with(z, |gv, &zv| {
                if zv <= 0.0 {
                    *gv = 0.0;
                }
            });
            let x = if l == 0 {
                &cache.assembled.input
            } else {
                &cache.activations[l - 1]
            };
            let (grads, g_prev) = layer.backward_batch(x.view(), g_h.view())?;
            hidden_grads.push(grads);
            g_h = g_prev;
        }
        hidden_grads.reverse();

        let (embedding, fusion) = assemble_backward(
            &cache.assembled,
            &cache.tokens,
            g_h.view(),
            &self.embedding,
            &self.fusion,
            cache.ablation,
        )?;
        Ok(HeadGrads {
            embedding,
            fusion,
            hidden: hidden_grads,
            output: output_grads,
        })
    }

    /// Trainable parameters in a fixed order; the padding row is excluded.
    pub fn flatten(&self) -> Vec<f64> {
        let dim = self.embedding.dim();
        let mut out: Vec<f64> = self.embedding.table().iter().skip(dim).copied().collect();
        for layer in std::iter::once(self.fusion.projection())
            .chain(&self.hidden)
            .chain(std::iter::once(&self.output))
        {
            out.extend(layer.weights().iter());
            out.extend(layer.bias().iter());
        }
        out
    }

    /// Inverse of [`HeadParams::flatten`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::dims("flat parameter vector", expected, values.len()));
        }
        let mut rest = values;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.embedding.trainable_rows_mut());
        let layers = std::iter::once(self.fusion.projection_mut())
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.output));
        for layer in layers {
            take(layer.weights_mut().as_slice_mut().expect("standard layout"));
            take(layer.bias_mut().as_slice_mut().expect("standard layout"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let dim = self.embedding.dim();
        let mut n = self.embedding.table().len() - dim;
        for layer in std::iter::once(self.fusion.projection())
            .chain(&self.hidden)
            .chain(std::iter::once(&self.output))
        {
            n += layer.weights().len() + layer.bias().len();
        }
        n
    }

    /// Sizes of the Adam parameter blocks, in update order.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.embedding.table().len() - self.embedding.dim()];
        for layer in std::iter::once(self.fusion.projection())
            .chain(&self.hidden)
            .chain(std::iter::once(&self.output))
        {
            sizes.push(layer.weights().len());
            sizes.push(layer.bias().len());
        }
        sizes
    }

    /// One optimizer step on every block of this head.
    pub fn apply_adam(&mut self, grads: &HeadGrads, adam: &mut AdamState, lr: f64) -> Result<()> {
        let dim = self.embedding.dim();
        let emb_grads = &grads.embedding.as_slice().expect("standard layout")[dim..];
        let mut names = vec!["embedding".to_owned()];
        names.push("fusion.weights".into());
        names.push("fusion.bias".into());
        for i in 0..self.hidden.len() {
            names.push(format!("hidden.{i}.weights"));
            names.push(format!("hidden.{i}.bias"));
        }
        names.push("output.weights".into());
        names.push("output.bias".into());

        let grad_layers: Vec<&DenseGrads> = std::iter::once(&grads.fusion)
            .chain(&grads.hidden)
            .chain(std::iter::once(&grads.output))
            .collect();
        let mut blocks = vec![ParamBlock {
            name: &names[0],
            params: self.embedding.trainable_rows_mut(),
            grads: emb_grads,
        }];
        let layers = std::iter::once(self.fusion.projection_mut())
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.output));
        for (i, (layer, g)) in layers.zip(grad_layers).enumerate() {
            let (w, b) = layer.params_mut();
            blocks.push(ParamBlock {
                name: &names[1 + 2 * i],
                params: w,
                grads: g.weights.as_slice().expect("standard layout"),
            });
            blocks.push(ParamBlock {
                name: &names[2 + 2 * i],
                params: b,
                grads: g.bias.as_slice().expect("standard layout"),
            });
        }
        adam.step(&mut blocks, lr)
    }

    /// Log price for a single item.
    pub fn forward_regression(&self, item: &InputBatch, ablation: Ablation) -> Result<f64> {
        self.single_output(HeadKind::Regressor, item, ablation)
    }

    /// Qualification confidence for a single item.
    pub fn forward_classification(&self, item: &InputBatch, ablation: Ablation) -> Result<f64> {
        self.single_output(HeadKind::Classifier, item, ablation)
    }

    fn single_output(&self, kind: HeadKind, item: &InputBatch, ablation: Ablation) -> Result<f64> {
        if self.kind != kind {
            return Err(Error::InvalidConfig(format!("head is a {:?}", self.kind)));
        }
        if item.len() != 1 {
            return Err(Error::dims("single-item batch", 1, item.len()));
        }
        Ok(self.predict(item, ablation)?[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

/// One item's suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub suggested_log_price: f64,
    pub confidence: f64,
    pub hard_label: Label,
}

impl PredictionOutcome {
    pub fn new(suggested_log_price: f64, confidence: f64) -> Self {
        let hard_label = if hard_indicator(confidence) == 1 {
            Label::Positive
        } else {
            Label::Negative
        };
        Self {
            suggested_log_price,
            confidence,
            hard_label,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.hard_label == Label::Positive
    }
}

/// Classifier and regressor outputs for every item of a batch. A missing
/// classifier labels everything positive with confidence 1.
pub fn predict_items(
    classifier: Option<&HeadParams>,
    regressor: &HeadParams,
    batch: &InputBatch,
    ablation: Ablation,
) -> Result<Vec<PredictionOutcome>> {
    const CHUNK: usize = 2048;
    let mut out = Vec::with_capacity(batch.len());
    let idx: Vec<usize> = (0..batch.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let sub = batch.select(chunk);
        let prices = regressor.predict(&sub, ablation)?;
        let confs = match classifier {
            Some(c) => c.predict(&sub, ablation)?,
            None => Array1::ones(sub.len()),
        };
        out.extend(
            prices
                .iter()
                .zip(confs.iter())
                .map(|(&p, &c)| PredictionOutcome::new(p, c)),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Classifier and regressor trained together under a constraint.
    #[default]
    Joint,
    /// Regressor trained alone on every training item.
    Baseline,
}

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: crate::data::DEFAULT_SPLIT,
            seed: 0,
        }
    }
}

/// Current model file layout.
pub const MODEL_LAYOUT_VERSION: u32 = 1;

/// Everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub layout_version: u32,
    pub architecture: Architecture,
    pub ablation: Ablation,
    pub strategy: Strategy,
    /// How the training split was drawn, so evaluation can recover it.
    pub split: SplitSpec,
    pub constraint: ConstraintConfig,
    pub range: RangeLossParams,
    pub features: FeatureContext,
    pub classifier: Option<HeadParams>,
    pub regressor: HeadParams,
}

impl ModelFile {
    pub fn validate(&self) -> Result<()> {
        if self.layout_version != MODEL_LAYOUT_VERSION {
            return Err(Error::ModelFormat(format!(
                "layout version {} is not supported (expected {})",
                self.layout_version, MODEL_LAYOUT_VERSION
            )));
        }
        self.architecture.validate()?;
        if let Some(c) = &self.classifier {
            if c.kind != HeadKind::Classifier {
                return Err(Error::ModelFormat("classifier slot holds a regressor".into()));
            }
            c.check_shapes(&self.architecture)?;
        }
        if self.regressor.kind != HeadKind::Regressor {
            return Err(Error::ModelFormat("regressor slot holds a classifier".into()));
        }
        self.regressor.check_shapes(&self.architecture)?;
        Ok(())
    }

    /// Compact JSON; identical parameters give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let model: Self =
            serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Checks a dataset's declared dimensions against the architecture.
    pub fn check_dataset(&self, visual_dim: usize, vocab_size: usize) -> Result<()> {
        if visual_dim != self.architecture.visual_dim {
            return Err(Error::dims("dataset visual_dim", self.architecture.visual_dim, visual_dim));
        }
        if vocab_size > self.architecture.vocab_size {
            return Err(Error::dims("dataset vocab_size", self.architecture.vocab_size, vocab_size));
        }
        Ok(())
    }
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<()> {
    model.validate()?;
    fs::write(path, model.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_bytes(&fs::read(path)?)
}
