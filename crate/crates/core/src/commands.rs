//! Subcommands behind the `price-suggest` binary.
//!
//! Configuration comes from TOML files whose keys mirror
//! [`SyntheticConfig`], [`TrainingConfig`] and [`Sweep`]; flags override
//! individual fields.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{
    generate_synthetic, inverse_log_transform, load_dataset, save_dataset, split_dataset,
    status_counts, Dataset, SaveOptions, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::features::Ablation;
use crate::model::{load_model, predict_items, ModelFile, Strategy};
use crate::objectives::{ConstraintMode, RangeMode};
use crate::trainer::{
    evaluate_split, qualified_correlation, run_experiment_suite, train_model, Prepared,
    PreparedSplit, Sweep, TrainingConfig,
};

#[derive(Debug, Parser)]
#[command(name = "price-suggest", version, about = "Joint price-range regression and qualification")]
pub struct Cli {
    /// Log level when RUST_LOG is unset.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic marketplace dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset's training split.
    Train(TrainArgs),
    /// Report metrics split by the classifier's verdict.
    Evaluate(EvaluateArgs),
    /// Write one suggestion per item.
    Predict(PredictArgs),
    /// Train and evaluate a series of configurations.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator settings (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_items: Option<usize>,
    /// Keep the generator's qualified flag in the file.
    #[arg(long)]
    pub keep_quality_hint: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Percentile,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Joint,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    None,
    NoImage,
    NoText,
    NoAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RangeModeArg {
    MultiplicativeLog,
    AdditiveLog,
}

/// Flags that override [`TrainingConfig`] fields.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    #[arg(long, value_enum)]
    pub range_mode: Option<RangeModeArg>,
    #[arg(long)]
    pub epochs_phase1: Option<usize>,
    #[arg(long)]
    pub epochs_phase2: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Select beta or gamma on the validation split.
    #[arg(long)]
    pub tune: bool,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainingConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = match v {
                StrategyArg::Joint => Strategy::Joint,
                StrategyArg::Baseline => Strategy::Baseline,
            };
        }
        if let Some(v) = self.mode {
            cfg.constraint.mode = match v {
                ModeArg::Percentile => ConstraintMode::Percentile,
                ModeArg::Threshold => ConstraintMode::Threshold,
            };
        }
        let c = &mut cfg.constraint;
        for (flag, field) in [
            (self.delta, &mut c.delta),
            (self.beta, &mut c.beta),
            (self.epsilon, &mut c.epsilon),
            (self.gamma, &mut c.gamma),
        ] {
            if let Some(v) = flag {
                *field = v;
            }
        }
        if let Some(v) = self.ablation {
            cfg.ablation = match v {
                AblationArg::None => Ablation::None,
                AblationArg::NoImage => Ablation::NoImage,
                AblationArg::NoText => Ablation::NoText,
                AblationArg::NoAttention => Ablation::NoAttention,
            };
        }
        if let Some(v) = self.range_mode {
            cfg.range.mode = match v {
                RangeModeArg::MultiplicativeLog => RangeMode::MultiplicativeLog,
                RangeModeArg::AdditiveLog => RangeMode::AdditiveLog,
            };
        }
        if let Some(v) = self.epochs_phase1 {
            cfg.epochs_phase1 = v;
        }
        if let Some(v) = self.epochs_phase2 {
            cfg.epochs_phase2 = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if self.tune {
            cfg.tuning.enabled = true;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training settings (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history (CSV); defaults to the model path with `.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Every item in the file.
    All,
    Train,
    Val,
    /// The test part of the split recorded in the model.
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// One JSON object per item.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Base training settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep definition (TOML), e.g. `kind = "percentile"` and `deltas = [0.4, 0.6]`.
    #[arg(long)]
    pub sweep: PathBuf,
    /// Result table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        Error::InvalidConfig(format!("{}: {}", path.display(), e.message()))
    })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{} is not a readable file", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::InvalidConfig(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

/// Writes through a sibling temporary file so a failed command leaves no
/// partial artifact.
fn write_atomically(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomically(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    if let Some(c) = &args.config {
        require_file(c)?;
    }
    require_parent(&args.out)?;
    let mut cfg: SyntheticConfig = read_toml(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_items {
        cfg.n_items = n;
    }
    let (dataset, _) = generate_synthetic(&cfg)?;
    let opts = SaveOptions {
        keep_quality_hint: args.keep_quality_hint,
    };
    let mut tmp = args.out.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    save_dataset(&dataset, &tmp, opts)?;
    fs::rename(&tmp, &args.out)?;
    let (sold, unsold) = status_counts(&dataset.items);
    println!("items {}  sold {}  unsold {}", dataset.items.len(), sold, unsold);
    Ok(())
}

fn load_training_config(path: Option<&Path>, overrides: &TrainOverrides) -> Result<TrainingConfig> {
    if let Some(p) = path {
        require_file(p)?;
    }
    let mut cfg: TrainingConfig = read_toml(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    require_file(&args.data)?;
    require_parent(&args.out)?;
    let cfg = load_training_config(args.config.as_deref(), &args.overrides)?;
    let history_path = args.history.clone().unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    require_parent(&history_path)?;

    let dataset = load_dataset(&args.data)?;
    let prepared = Prepared::new(&dataset, &cfg)?;
    info!("training {} on {} items", cfg.describe(), prepared.train.len());
    let outcome = train_model(&prepared, &cfg)?;

    outcome.model.validate()?;
    let bytes = outcome.model.to_bytes()?;
    write_atomically(&args.out, |w| Ok(w.write_all(&bytes)?))?;
    write_atomically(&history_path, |w| outcome.history.write_csv(w))?;
    if let Some(last) = outcome.history.epochs.last() {
        println!(
            "epochs {}  objective {:.5}  positive fraction {:.4}",
            outcome.history.epochs.len(),
            last.objective,
            last.positive_fraction
        );
    } else {
        println!("epochs 0");
    }
    Ok(())
}

/// Loads a model and a dataset and checks that they fit together.
fn load_pair(model: &Path, data: &Path) -> Result<(ModelFile, Dataset)> {
    require_file(model)?;
    require_file(data)?;
    let model = load_model(model)?;
    let dataset = load_dataset(data)?;
    if dataset.items.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    model.check_dataset(dataset.visual_dim, dataset.vocab_size)?;
    Ok((model, dataset))
}

fn select_items(model: &ModelFile, dataset: Dataset, split: SplitArg) -> Result<Vec<crate::data::ItemRecord>> {
    if split == SplitArg::All {
        return Ok(dataset.items);
    }
    let s = split_dataset(&dataset.items, model.split.fractions, model.split.seed)?;
    Ok(match split {
        SplitArg::Train => s.train,
        SplitArg::Val => s.val,
        _ => s.test,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    require_parent(&args.out)?;
    let (model, dataset) = load_pair(&args.model, &args.data)?;
    let items = select_items(&model, dataset, args.split)?;
    let split = PreparedSplit::new(&items, &model.features)?;
    let report = evaluate_split(
        model.classifier.as_ref(),
        &model.regressor,
        &split,
        &model.range,
        model.ablation,
    )?;
    write_json(&args.out, &report)?;
    println!(
        "items {}  positive {} ({:.2}%)  positive SMLE {:.4}  negative SMLE {:.4}",
        report.n_items,
        report.n_positive,
        100.0 * report.positive_fraction,
        report.positive.smle,
        report.negative.smle
    );
    if split.qualified.iter().any(Option::is_some) {
        let preds = predict_items(model.classifier.as_ref(), &model.regressor, &split.batch, model.ablation)?;
        if let Some(r) = qualified_correlation(&preds, &split.qualified) {
            println!("correlation with generator qualified flag {r:.4}");
        }
    }
    Ok(())
}

/// Verdict for items the classifier rejects.
pub const UPDATE_ENCOURAGED: &str = "update encouraged";

/// One line of `predict` output.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct PredictionLine {
    pub id: String,
    /// `positive` or [`UPDATE_ENCOURAGED`].
    pub verdict: String,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub suggested_log_price: Option<f64>,
    /// Suggested price in CHN (Chinese Yuan).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub suggested_price_chn: Option<f64>,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    require_parent(&args.out)?;
    let (model, dataset) = load_pair(&args.model, &args.data)?;
    let split = PreparedSplit::new(&dataset.items, &model.features)?;
    let preds = predict_items(model.classifier.as_ref(), &model.regressor, &split.batch, model.ablation)?;
    let mut positives = 0;
    write_atomically(&args.out, |w| {
        for (item, p) in dataset.items.iter().zip(&preds) {
            let line = if p.is_positive() {
                positives += 1;
                PredictionLine {
                    id: item.id.clone(),
                    verdict: "positive".into(),
                    confidence: p.confidence,
                    suggested_log_price: Some(p.suggested_log_price),
                    suggested_price_chn: Some(inverse_log_transform(p.suggested_log_price)),
                }
            } else {
                PredictionLine {
                    id: item.id.clone(),
                    verdict: UPDATE_ENCOURAGED.into(),
                    confidence: p.confidence,
                    suggested_log_price: None,
                    suggested_price_chn: None,
                }
            };
            serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    println!("items {}  priced {}  update encouraged {}", preds.len(), positives, preds.len() - positives);
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    require_file(&args.data)?;
    require_file(&args.sweep)?;
    require_parent(&args.out)?;
    let cfg = load_training_config(args.config.as_deref(), &args.overrides)?;
    let text = fs::read_to_string(&args.sweep)?;
    let sweep: Sweep = toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {}", args.sweep.display(), e.message())))?;
    let dataset = load_dataset(&args.data)?;
    let prepared = Prepared::new(&dataset, &cfg)?;
    let table = run_experiment_suite(&prepared, &cfg, &sweep)?;
    write_atomically(&args.out, |w| table.write_csv(w))?;
    for r in &table.rows {
        println!(
            "{:<22} positive {:>6} ({:>6.2}%)  SMLE {:.4}  UMLE {:.4}",
            r.label, r.n_positive, r.pct_positive, r.pos_smle, r.pos_umle
        );
    }
    Ok(())
}
