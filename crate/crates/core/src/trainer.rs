//! Joint and baseline training, evaluation, and experiment sweeps.

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Dataset, ItemRecord, QualityHint};
use crate::error::{Error, Result};
use crate::features::{Ablation, FeatureContext, InputBatch};
use crate::metrics::{split_report, EvaluationReport, ItemOutcome, MetricReport};
use crate::model::{
    predict_items, Architecture, HeadKind, HeadParams, ModelFile, PredictionOutcome, SplitSpec,
    Strategy, MODEL_LAYOUT_VERSION,
};
use crate::numeric::{AdamConfig, AdamState};
use crate::objectives::{
    hard_indicator, joint_objective, range_loss, ConstraintConfig, ConstraintMode,
    RangeLossParams,
};

/// Validation-grid selection of `beta` (percentile) or `gamma` (threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub enabled: bool,
    pub grid: Vec<f64>,
    /// Share of both phases' epochs each candidate trains for.
    pub epoch_fraction: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            grid: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            epoch_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub strategy: Strategy,
    pub constraint: ConstraintConfig,
    pub range: RangeLossParams,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub hidden_sizes: Vec<usize>,
    pub embed_dim: usize,
    /// Checked against the dataset when set.
    pub visual_dim: Option<usize>,
    pub split: SplitSpec,
    pub tuning: TuningConfig,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Joint,
            constraint: ConstraintConfig::default(),
            range: RangeLossParams::default(),
            lr_phase1: 5e-4,
            lr_phase2: 2e-4,
            epochs_phase1: 60,
            epochs_phase2: 30,
            batch_size: 256,
            seed: 0,
            ablation: Ablation::None,
            hidden_sizes: vec![128, 64],
            embed_dim: 8,
            visual_dim: None,
            split: SplitSpec::default(),
            tuning: TuningConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_phase1 > 0.0) || !(self.lr_phase2 > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.constraint.mode == ConstraintMode::Threshold && self.batch_size < 2 {
            return bad("threshold mode needs batch_size >= 2".into());
        }
        if self.tuning.enabled
            && (self.tuning.grid.is_empty()
                || !(self.tuning.epoch_fraction > 0.0 && self.tuning.epoch_fraction <= 1.0))
        {
            return bad("tuning needs a non-empty grid and epoch_fraction in (0, 1]".into());
        }
        self.constraint.validate()?;
        self.range.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }

    pub fn architecture(&self, visual_dim: usize, vocab_size: usize) -> Result<Architecture> {
        if let Some(v) = self.visual_dim {
            if v != visual_dim {
                return Err(Error::dims("configured visual_dim", v, visual_dim));
            }
        }
        let arch = Architecture {
            visual_dim,
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_sizes: self.hidden_sizes.clone(),
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Short identity used in sweep rows and error messages.
    pub fn describe(&self) -> String {
        let c = &self.constraint;
        let mode = match (self.strategy, c.mode) {
            (Strategy::Baseline, _) => "baseline".to_owned(),
            (_, ConstraintMode::Percentile) => format!("percentile delta={} beta={}", c.delta, c.beta),
            (_, ConstraintMode::Threshold) => format!("threshold epsilon={} gamma={}", c.epsilon, c.gamma),
        };
        format!("{mode} ablation={:?} seed={}", self.ablation, self.seed)
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Item-weighted mean of the batch objectives.
    pub objective: f64,
    /// Hard-positive share over the epoch's items, before each update.
    pub positive_fraction: f64,
    /// Mean range loss of the hard-positive items.
    pub positive_mean_loss: f64,
    /// Item-weighted mean of the penalty or cross-entropy term.
    pub constraint_term: f64,
    pub single_class_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    /// The header row is written even when there are no epochs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record([
            "epoch",
            "learning_rate",
            "objective",
            "positive_fraction",
            "positive_mean_loss",
            "constraint_term",
            "single_class_batches",
        ])?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Model inputs and outcomes for one split.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub batch: InputBatch,
    pub outcomes: Vec<ItemOutcome>,
    /// Generator ground truth where the file kept it.
    pub qualified: Vec<Option<bool>>,
}

impl PreparedSplit {
    pub fn new(records: &[ItemRecord], features: &FeatureContext) -> Result<Self> {
        Ok(Self {
            batch: InputBatch::from_records(records, features)?,
            outcomes: records
                .iter()
                .map(|r| ItemOutcome {
                    status: r.status,
                    log_price: r.log_price,
                })
                .collect(),
            qualified: records
                .iter()
                .map(|r| r.quality_hint.map(|q| q == QualityHint::Qualified))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// A dataset split three ways with features fit on the training part.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub architecture: Architecture,
    pub features: FeatureContext,
    pub split: SplitSpec,
    pub train: PreparedSplit,
    pub val: PreparedSplit,
    pub test: PreparedSplit,
}

impl Prepared {
    pub fn new(dataset: &Dataset, cfg: &TrainingConfig) -> Result<Self> {
        let architecture = cfg.architecture(dataset.visual_dim, dataset.vocab_size)?;
        let splits = split_dataset(&dataset.items, cfg.split.fractions, cfg.split.seed)?;
        if splits.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let features = FeatureContext::fit(&splits.train)?;
        Ok(Self {
            train: PreparedSplit::new(&splits.train, &features)?,
            val: PreparedSplit::new(&splits.val, &features)?,
            test: PreparedSplit::new(&splits.test, &features)?,
            architecture,
            features,
            split: cfg.split,
        })
    }
}

/// Heads produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainedHeads {
    pub classifier: Option<HeadParams>,
    pub regressor: HeadParams,
    pub history: TrainingHistory,
}

fn init_heads(arch: &Architecture, seed: u64) -> (HeadParams, HeadParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classifier = HeadParams::init(HeadKind::Classifier, arch, &mut rng);
    let regressor = HeadParams::init(HeadKind::Regressor, arch, &mut rng);
    (classifier, regressor)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn schedule(cfg: &TrainingConfig) -> impl Iterator<Item = (usize, f64)> {
    let (p1, lr1, lr2) = (cfg.epochs_phase1, cfg.lr_phase1, cfg.lr_phase2);
    (0..cfg.total_epochs()).map(move |e| (e, if e < p1 { lr1 } else { lr2 }))
}

fn diverged(epoch: usize, batch: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence { epoch, batch },
        other => other,
    }
}

/// Per-item range losses and their subgradients.
fn losses_for(
    prices: &[f64],
    outcomes: &[ItemOutcome],
    rp: &RangeLossParams,
) -> (Vec<f64>, Vec<f64>) {
    prices
        .iter()
        .zip(outcomes)
        .map(|(&p, o)| range_loss(o.status, p, o.log_price, rp))
        .unzip()
}

/// Trains classifier and regressor together under the configured
/// constraint. Both heads take one Adam step per mini-batch.
pub fn train_joint(train: &PreparedSplit, arch: &Architecture, cfg: &TrainingConfig) -> Result<TrainedHeads> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let (mut classifier, mut regressor) = init_heads(arch, cfg.seed);
    let mut adam_c = AdamState::new(cfg.adam, &classifier.block_sizes());
    let mut adam_r = AdamState::new(cfg.adam, &regressor.block_sizes());
    let mut rng = shuffle_rng(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainingHistory::default();

    for (epoch, lr) in schedule(cfg) {
        order.shuffle(&mut rng);
        let mut acc = EpochAccumulator::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.batch.select(idx);
            let outcomes: Vec<ItemOutcome> = idx.iter().map(|&i| train.outcomes[i]).collect();
            let cache_c = classifier.forward(&batch, cfg.ablation).map_err(diverged(epoch, b))?;
            let cache_r = regressor.forward(&batch, cfg.ablation).map_err(diverged(epoch, b))?;
            let confs = cache_c.output().as_slice().expect("contiguous");
            let prices = cache_r.output().as_slice().expect("contiguous");
            let (losses, subgrads) = losses_for(prices, &outcomes, &cfg.range);
            let obj = joint_objective(confs, &losses, &cfg.constraint)?;
            if !obj.value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            acc.add(confs, &losses, obj.value, obj.constraint_term, obj.single_class);

            let upstream_r: Vec<f64> =
                obj.grad_loss.iter().zip(&subgrads).map(|(g, s)| g * s).collect();
            let grads_c = classifier.backward(&cache_c, &obj.grad_conf)?;
            let grads_r = regressor.backward(&cache_r, &upstream_r)?;
            classifier
                .apply_adam(&grads_c, &mut adam_c, lr)
                .map_err(diverged(epoch, b))?;
            regressor
                .apply_adam(&grads_r, &mut adam_r, lr)
                .map_err(diverged(epoch, b))?;
        }
        let record = acc.finish(epoch, lr);
        debug!(
            "epoch {epoch}: objective {:.5} positive {:.3} positive loss {:.4}",
            record.objective, record.positive_fraction, record.positive_mean_loss
        );
        history.epochs.push(record);
    }
    Ok(TrainedHeads {
        classifier: Some(classifier),
        regressor,
        history,
    })
}

/// Trains the regressor alone on the unweighted mean range loss, with the
/// joint run's architecture, initialization and schedule.
pub fn train_baseline_regression(
    train: &PreparedSplit,
    arch: &Architecture,
    cfg: &TrainingConfig,
) -> Result<TrainedHeads> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let (_, mut regressor) = init_heads(arch, cfg.seed);
    let mut adam = AdamState::new(cfg.adam, &regressor.block_sizes());
    let mut rng = shuffle_rng(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainingHistory::default();

    for (epoch, lr) in schedule(cfg) {
        order.shuffle(&mut rng);
        let mut acc = EpochAccumulator::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.batch.select(idx);
            let outcomes: Vec<ItemOutcome> = idx.iter().map(|&i| train.outcomes[i]).collect();
            let cache = regressor.forward(&batch, cfg.ablation).map_err(diverged(epoch, b))?;
            let prices = cache.output().as_slice().expect("contiguous");
            let (losses, subgrads) = losses_for(prices, &outcomes, &cfg.range);
            let n = losses.len() as f64;
            let value = losses.iter().sum::<f64>() / n;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            acc.add(&vec![1.0; losses.len()], &losses, value, 0.0, false);
            let upstream: Vec<f64> = subgrads.iter().map(|s| s / n).collect();
            let grads = regressor.backward(&cache, &upstream)?;
            regressor
                .apply_adam(&grads, &mut adam, lr)
                .map_err(diverged(epoch, b))?;
        }
        history.epochs.push(acc.finish(epoch, lr));
    }
    Ok(TrainedHeads {
        classifier: None,
        regressor,
        history,
    })
}

#[derive(Default)]
struct EpochAccumulator {
    items: usize,
    objective: f64,
    constraint: f64,
    positives: usize,
    positive_loss: f64,
    single_class: usize,
}

impl EpochAccumulator {
    fn add(&mut self, confs: &[f64], losses: &[f64], value: f64, constraint: f64, single: bool) {
        let n = confs.len();
        self.items += n;
        self.objective += value * n as f64;
        self.constraint += constraint * n as f64;
        for (&c, &l) in confs.iter().zip(losses) {
            if hard_indicator(c) == 1 {
                self.positives += 1;
                self.positive_loss += l;
            }
        }
        self.single_class += usize::from(single);
    }

    fn finish(self, epoch: usize, learning_rate: f64) -> EpochRecord {
        let n = self.items.max(1) as f64;
        EpochRecord {
            epoch,
            learning_rate,
            objective: self.objective / n,
            positive_fraction: self.positives as f64 / n,
            positive_mean_loss: if self.positives == 0 {
                0.0
            } else {
                self.positive_loss / self.positives as f64
            },
            constraint_term: self.constraint / n,
            single_class_batches: self.single_class,
        }
    }
}

/// Classifies every item, predicts every price, and reports metrics per
/// side. Without a classifier every item is positive.
pub fn evaluate_split(
    classifier: Option<&HeadParams>,
    regressor: &HeadParams,
    split: &PreparedSplit,
    rp: &RangeLossParams,
    ablation: Ablation,
) -> Result<EvaluationReport> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let preds = predict_items(classifier, regressor, &split.batch, ablation)?;
    split_report(&preds, &split.outcomes, rp)
}

/// Evaluates `regressor` on the items `classifier` labels positive.
pub fn evaluate_on_positives(
    classifier: &HeadParams,
    regressor: &HeadParams,
    split: &PreparedSplit,
    rp: &RangeLossParams,
    ablation: Ablation,
) -> Result<MetricReport> {
    let preds = predict_items(Some(classifier), regressor, &split.batch, ablation)?;
    Ok(split_report(&preds, &split.outcomes, rp)?.positive)
}

/// Point-biserial correlation between hard labels and the generator's
/// qualified flag, over items that carry the flag.
pub fn qualified_correlation(preds: &[PredictionOutcome], qualified: &[Option<bool>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = preds
        .iter()
        .zip(qualified)
        .filter_map(|(p, q)| q.map(|q| (f64::from(u8::from(p.is_positive())), f64::from(u8::from(q)))))
        .collect();
    let n = pairs.len() as f64;
    if n < 2.0 {
        return None;
    }
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn scaled(cfg: &TrainingConfig, fraction: f64) -> TrainingConfig {
    let scale = |e: usize| ((e as f64 * fraction).round() as usize).max(usize::from(e > 0));
    TrainingConfig {
        epochs_phase1: scale(cfg.epochs_phase1),
        epochs_phase2: scale(cfg.epochs_phase2),
        ..cfg.clone()
    }
}

/// One candidate of a weight search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningCandidate {
    pub weight: f64,
    pub positive_fraction: f64,
    pub positive_smle: f64,
}

/// Picks `beta` (percentile) or `gamma` (threshold) on the validation split.
///
/// Percentile: the candidate whose positive fraction is closest to `delta`.
/// Threshold: among candidates within 0.1 of the median positive fraction,
/// the lowest positive-side SMLE. Ties go to the earlier grid entry.
pub fn select_constraint_weight(
    prepared: &Prepared,
    cfg: &TrainingConfig,
) -> Result<(f64, Vec<TuningCandidate>)> {
    let eval_split = if prepared.val.is_empty() {
        &prepared.train
    } else {
        &prepared.val
    };
    let trial_cfg = scaled(cfg, cfg.tuning.epoch_fraction);
    let mut candidates = Vec::with_capacity(cfg.tuning.grid.len());
    for &w in &cfg.tuning.grid {
        let mut c = trial_cfg.clone();
        match c.constraint.mode {
            ConstraintMode::Percentile => c.constraint.beta = w,
            ConstraintMode::Threshold => c.constraint.gamma = w,
        }
        let heads = train_joint(&prepared.train, &prepared.architecture, &c).map_err(|e| {
            Error::Experiment {
                config: c.describe(),
                source: Box::new(e),
            }
        })?;
        let report = evaluate_split(
            heads.classifier.as_ref(),
            &heads.regressor,
            eval_split,
            &c.range,
            c.ablation,
        )?;
        debug!("tuning {}: positive {:.3}", c.describe(), report.positive_fraction);
        candidates.push(TuningCandidate {
            weight: w,
            positive_fraction: report.positive_fraction,
            positive_smle: report.positive.smle,
        });
    }
    let best = match cfg.constraint.mode {
        ConstraintMode::Percentile => {
            let gap = |c: &TuningCandidate| (c.positive_fraction - cfg.constraint.delta).abs();
            candidates
                .iter()
                .fold(None::<&TuningCandidate>, |best, c| match best {
                    Some(b) if gap(b) <= gap(c) => Some(b),
                    _ => Some(c),
                })
        }
        ConstraintMode::Threshold => {
            let mut fr: Vec<f64> = candidates.iter().map(|c| c.positive_fraction).collect();
            fr.sort_by(f64::total_cmp);
            let median = fr[fr.len() / 2];
            candidates
                .iter()
                .filter(|c| (c.positive_fraction - median).abs() <= 0.1)
                .fold(None::<&TuningCandidate>, |best, c| match best {
                    Some(b) if b.positive_smle <= c.positive_smle => Some(b),
                    _ => Some(c),
                })
        }
    };
    let weight = best.expect("non-empty grid").weight;
    Ok((weight, candidates))
}

/// Result of a full training run, ready to be written out.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelFile,
    pub history: TrainingHistory,
    /// Tuning trace, empty when tuning is off.
    pub tuning: Vec<TuningCandidate>,
}

/// Splits, optionally tunes, trains, and packages the model.
pub fn train_model(prepared: &Prepared, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let mut tuning = Vec::new();
    if cfg.tuning.enabled && cfg.strategy == Strategy::Joint {
        let (w, trace) = select_constraint_weight(prepared, &cfg)?;
        match cfg.constraint.mode {
            ConstraintMode::Percentile => cfg.constraint.beta = w,
            ConstraintMode::Threshold => cfg.constraint.gamma = w,
        }
        info!("selected constraint weight {w}");
        tuning = trace;
    }
    let heads = match cfg.strategy {
        Strategy::Joint => train_joint(&prepared.train, &prepared.architecture, &cfg),
        Strategy::Baseline => train_baseline_regression(&prepared.train, &prepared.architecture, &cfg),
    }
    .map_err(|e| Error::Experiment {
        config: cfg.describe(),
        source: Box::new(e),
    })?;
    let model = ModelFile {
        layout_version: MODEL_LAYOUT_VERSION,
        architecture: prepared.architecture.clone(),
        ablation: cfg.ablation,
        strategy: cfg.strategy,
        split: prepared.split,
        constraint: cfg.constraint,
        range: cfg.range,
        features: prepared.features.clone(),
        classifier: heads.classifier,
        regressor: heads.regressor,
    };
    Ok(TrainOutcome {
        model,
        history: heads.history,
        tuning,
    })
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    /// One joint run per `delta`.
    Percentile { deltas: Vec<f64> },
    /// One joint run per `epsilon`.
    Threshold { epsilons: Vec<f64> },
    /// The full model, a separately trained baseline regressor judged on the
    /// full model's positives, and one run per ablation.
    Ablation { ablations: Vec<Ablation> },
}

/// One configuration's results, flattened for tabular output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub mode: String,
    pub level: f64,
    pub weight: f64,
    pub n_items: usize,
    pub n_positive: usize,
    pub pct_positive: f64,
    pub pos_smle: f64,
    pub pos_spdmle: f64,
    pub pos_spimle: f64,
    pub pos_umle: f64,
    pub pos_updmle: f64,
    pub pos_upimle: f64,
    pub neg_smle: f64,
    pub neg_spdmle: f64,
    pub neg_spimle: f64,
    pub neg_umle: f64,
    pub neg_updmle: f64,
    pub neg_upimle: f64,
}

impl ExperimentRow {
    pub fn new(label: impl Into<String>, cfg: &ConstraintConfig, report: &EvaluationReport) -> Self {
        let (mode, weight) = match cfg.mode {
            ConstraintMode::Percentile => ("percentile", cfg.beta),
            ConstraintMode::Threshold => ("threshold", cfg.gamma),
        };
        let (p, n) = (&report.positive, &report.negative);
        Self {
            label: label.into(),
            mode: mode.into(),
            level: cfg.level(),
            weight,
            n_items: report.n_items,
            n_positive: report.n_positive,
            pct_positive: 100.0 * report.positive_fraction,
            pos_smle: p.smle,
            pos_spdmle: p.spdmle,
            pos_spimle: p.spimle,
            pos_umle: p.umle,
            pos_updmle: p.updmle,
            pos_upimle: p.upimle,
            neg_smle: n.smle,
            neg_spdmle: n.spdmle,
            neg_spimle: n.spimle,
            neg_umle: n.umle,
            neg_updmle: n.updmle,
            neg_upimle: n.upimle,
        }
    }
}

/// A sweep's rows together with the reports they came from.
#[derive(Debug, Clone, Default)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub reports: Vec<EvaluationReport>,
}

impl ExperimentTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, label: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn run_one(prepared: &Prepared, cfg: &TrainingConfig) -> Result<(TrainOutcome, EvaluationReport)> {
    let wrap = |e: Error| match e {
        e @ Error::Experiment { .. } => e,
        e => Error::Experiment {
            config: cfg.describe(),
            source: Box::new(e),
        },
    };
    let outcome = train_model(prepared, cfg).map_err(wrap)?;
    let report = evaluate_split(
        outcome.model.classifier.as_ref(),
        &outcome.model.regressor,
        &prepared.test,
        &cfg.range,
        cfg.ablation,
    )
    .map_err(wrap)?;
    info!(
        "{}: {:.2}% positive, positive SMLE {:.4}",
        cfg.describe(),
        100.0 * report.positive_fraction,
        report.positive.smle
    );
    Ok((outcome, report))
}

/// Trains and evaluates every configuration of `sweep` on the test split,
/// all with `base`'s seed.
///
/// With tuning on, a percentile sweep selects `beta` for each `delta`,
/// since the selection rule targets `delta` itself. Threshold and ablation
/// sweeps select the weight once, for `base`'s constraint and the full
/// model, and keep it fixed so rows differ only in the swept factor.
pub fn run_experiment_suite(
    prepared: &Prepared,
    base: &TrainingConfig,
    sweep: &Sweep,
) -> Result<ExperimentTable> {
    let mut table = ExperimentTable::default();
    let mut push = |label: String, cfg: &ConstraintConfig, report: EvaluationReport| {
        table.rows.push(ExperimentRow::new(label, cfg, &report));
        table.reports.push(report);
    };
    let mut base = base.clone();
    base.strategy = Strategy::Joint;
    let fix_weight = |mut cfg: TrainingConfig| -> Result<TrainingConfig> {
        if cfg.tuning.enabled {
            let (w, _) = select_constraint_weight(prepared, &cfg)?;
            match cfg.constraint.mode {
                ConstraintMode::Percentile => cfg.constraint.beta = w,
                ConstraintMode::Threshold => cfg.constraint.gamma = w,
            }
            info!("fixed constraint weight {w} for the sweep");
            cfg.tuning.enabled = false;
        }
        Ok(cfg)
    };
    match sweep {
        Sweep::Percentile { deltas } => {
            for &delta in deltas {
                let mut cfg = base.clone();
                cfg.constraint = ConstraintConfig::percentile(delta, base.constraint.beta);
                let (out, report) = run_one(prepared, &cfg)?;
                push(format!("percentile {:.0}%", 100.0 * delta), &out.model.constraint, report);
            }
        }
        Sweep::Threshold { epsilons } => {
            let mut tuned = base.clone();
            tuned.constraint = ConstraintConfig::threshold(base.constraint.epsilon, base.constraint.gamma);
            let tuned = fix_weight(tuned)?;
            for &eps in epsilons {
                let mut cfg = tuned.clone();
                cfg.constraint.epsilon = eps;
                let (out, report) = run_one(prepared, &cfg)?;
                push(format!("threshold {eps:.3}"), &out.model.constraint, report);
            }
        }
        Sweep::Ablation { ablations } => {
            let mut full = base.clone();
            full.ablation = Ablation::None;
            let full = fix_weight(full)?;
            let (ours, report) = run_one(prepared, &full)?;
            let classifier = ours.model.classifier.as_ref().expect("joint model");

            let mut baseline_cfg = full.clone();
            baseline_cfg.strategy = Strategy::Baseline;
            let (baseline, _) = run_one(prepared, &baseline_cfg)?;
            let baseline_report = evaluate_split(
                Some(classifier),
                &baseline.model.regressor,
                &prepared.test,
                &full.range,
                Ablation::None,
            )?;
            push("Baseline".into(), &ours.model.constraint, baseline_report);
            push(Ablation::None.label().into(), &ours.model.constraint, report);

            for &ablation in ablations.iter().filter(|a| **a != Ablation::None) {
                let mut cfg = full.clone();
                cfg.ablation = ablation;
                let (out, report) = run_one(prepared, &cfg)?;
                push(ablation.label().into(), &out.model.constraint, report);
            }
        }
    }
    Ok(table)
}
