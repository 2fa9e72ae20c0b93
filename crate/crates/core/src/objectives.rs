//! Target-price-range loss and the two joint objectives.
//!
//! A sold item's suggested log price should lie in `[p_sold, mu * p_sold]`,
//! an unsold item's in `[nu * p_list, p_list]`. The range loss is the hinge
//! distance to that interval. The joint objectives weight each item's range
//! loss by the classifier confidence and add either a percentile penalty or
//! a class-weighted cross entropy against loss-threshold labels.

use serde::{Deserialize, Serialize};

use crate::data::Status;
use crate::error::{Error, Result};

/// Confidences are clamped to `[CONF_CLAMP, 1 - CONF_CLAMP]` inside logs.
pub const CONF_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    /// Bounds `mu * p` and `nu * p` applied to the log prices themselves.
    #[default]
    MultiplicativeLog,
    /// Bounds `p + ln mu` and `p + ln nu`, i.e. price ratios in currency.
    AdditiveLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeLossParams {
    pub mu: f64,
    pub nu: f64,
    pub mode: RangeMode,
}

impl Default for RangeLossParams {
    fn default() -> Self {
        Self {
            mu: 1.2,
            nu: 1.0 / 1.2,
            mode: RangeMode::MultiplicativeLog,
        }
    }
}

impl RangeLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 1.0) || !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "range loss needs mu > 1 and 0 < nu < 1, got mu={} nu={}",
                self.mu, self.nu
            )));
        }
        Ok(())
    }

    /// `[p_sold, upper]`.
    pub fn sold_range(&self, p_sold: f64) -> (f64, f64) {
        let upper = match self.mode {
            RangeMode::MultiplicativeLog => self.mu * p_sold,
            RangeMode::AdditiveLog => p_sold + self.mu.ln(),
        };
        (p_sold, upper)
    }

    /// `[lower, p_list]`.
    pub fn unsold_range(&self, p_list: f64) -> (f64, f64) {
        let lower = match self.mode {
            RangeMode::MultiplicativeLog => self.nu * p_list,
            RangeMode::AdditiveLog => p_list + self.nu.ln(),
        };
        (lower, p_list)
    }

    pub fn target_range(&self, status: Status, price: f64) -> (f64, f64) {
        match status {
            Status::Sold => self.sold_range(price),
            Status::Unsold => self.unsold_range(price),
        }
    }
}

/// Hinge distance of `p` to `[lower, upper]` and its subgradient. The
/// below-range branch is tested first; boundaries count as inside.
fn hinge(p: f64, lower: f64, upper: f64) -> (f64, f64) {
    if p < lower {
        (lower - p, -1.0)
    } else if p > upper {
        (p - upper, 1.0)
    } else {
        (0.0, 0.0)
    }
}

pub fn range_loss_sold(p_sug: f64, p_sold: f64, rp: &RangeLossParams) -> f64 {
    let (lo, hi) = rp.sold_range(p_sold);
    hinge(p_sug, lo, hi).0
}

pub fn range_loss_unsold(p_sug: f64, p_list: f64, rp: &RangeLossParams) -> f64 {
    let (lo, hi) = rp.unsold_range(p_list);
    hinge(p_sug, lo, hi).0
}

/// Loss and subgradient in `{-1, 0, +1}` with respect to `p_sug`.
pub fn range_loss(status: Status, p_sug: f64, price: f64, rp: &RangeLossParams) -> (f64, f64) {
    let (lo, hi) = rp.target_range(status, price);
    hinge(p_sug, lo, hi)
}

/// Distance from `p_sug` to the nearer boundary of its target range.
pub fn range_kink_distance(status: Status, p_sug: f64, price: f64, rp: &RangeLossParams) -> f64 {
    let (lo, hi) = rp.target_range(status, price);
    (p_sug - lo).abs().min((p_sug - hi).abs())
}

/// `1` when `confidence >= 0.5`.
pub fn hard_indicator(confidence: f64) -> u8 {
    u8::from(confidence >= 0.5)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    Percentile,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub mode: ConstraintMode,
    /// Minimum share of positive items (percentile mode).
    pub delta: f64,
    /// Penalty weight (percentile mode).
    pub beta: f64,
    /// Loss threshold for positive labels (threshold mode).
    pub epsilon: f64,
    /// Cross-entropy weight (threshold mode).
    pub gamma: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            mode: ConstraintMode::Percentile,
            delta: 0.6,
            beta: 1.0,
            epsilon: 0.15,
            gamma: 1.0,
        }
    }
}

impl ConstraintConfig {
    pub fn percentile(delta: f64, beta: f64) -> Self {
        Self {
            mode: ConstraintMode::Percentile,
            delta,
            beta,
            ..Self::default()
        }
    }

    pub fn threshold(epsilon: f64, gamma: f64) -> Self {
        Self {
            mode: ConstraintMode::Threshold,
            epsilon,
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            ConstraintMode::Percentile => {
                self.delta > 0.0 && self.delta <= 1.0 && self.beta >= 0.0
            }
            ConstraintMode::Threshold => self.epsilon > 0.0 && self.gamma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("constraint out of range: {self:?}")))
        }
    }

    /// The swept quantity of the active mode: `delta` or `epsilon`.
    pub fn level(&self) -> f64 {
        match self.mode {
            ConstraintMode::Percentile => self.delta,
            ConstraintMode::Threshold => self.epsilon,
        }
    }
}

/// Value of a joint objective over a batch and its per-item gradient
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub value: f64,
    /// `mean(conf_i * L_i)`.
    pub weighted_loss: f64,
    /// Percentile penalty or weighted cross-entropy term (already scaled).
    pub constraint_term: f64,
    /// d value / d L_i.
    pub grad_loss: Vec<f64>,
    /// d value / d conf_i.
    pub grad_conf: Vec<f64>,
    /// Share of items with `conf >= 0.5`.
    pub positive_fraction: f64,
    /// Threshold mode: the batch held only one label class.
    pub single_class: bool,
}

fn check_batch(confs: &[f64], losses: &[f64]) -> Result<()> {
    if confs.is_empty() {
        return Err(Error::Empty("objective batch"));
    }
    if confs.len() != losses.len() {
        return Err(Error::dims("objective batch", confs.len(), losses.len()));
    }
    Ok(())
}

/// `mean(conf * L) + beta * max(0, delta - mean(I(conf)))`.
///
/// The indicator is non-differentiable; its gradient is taken as that of
/// `conf` itself (straight-through), so while the penalty is active every
/// confidence receives an extra `-beta / N`.
pub fn percentile_objective(
    confs: &[f64],
    losses: &[f64],
    cfg: &ConstraintConfig,
) -> Result<ObjectiveOutput> {
    check_batch(confs, losses)?;
    if cfg.mode != ConstraintMode::Percentile {
        return Err(Error::InvalidConfig("percentile objective needs percentile mode".into()));
    }
    let n = confs.len() as f64;
    let weighted_loss = confs.iter().zip(losses).map(|(c, l)| c * l).sum::<f64>() / n;
    let positive_fraction =
        confs.iter().map(|&c| f64::from(hard_indicator(c))).sum::<f64>() / n;
    let gap = cfg.delta - positive_fraction;
    let active = gap > 0.0;
    let penalty = if active { cfg.beta * gap } else { 0.0 };
    let push = if active { cfg.beta / n } else { 0.0 };
    Ok(ObjectiveOutput {
        value: weighted_loss + penalty,
        weighted_loss,
        constraint_term: penalty,
        grad_loss: confs.iter().map(|c| c / n).collect(),
        grad_conf: losses.iter().map(|l| l / n - push).collect(),
        positive_fraction,
        single_class: false,
    })
}

/// The smooth function whose gradient [`percentile_objective`] reports:
/// the indicator mean replaced by the confidence mean, with the penalty's
/// on/off state frozen at the value the hard indicators give.
pub fn percentile_surrogate(confs: &[f64], losses: &[f64], cfg: &ConstraintConfig) -> f64 {
    let n = confs.len() as f64;
    let weighted = confs.iter().zip(losses).map(|(c, l)| c * l).sum::<f64>() / n;
    let hard = confs.iter().map(|&c| f64::from(hard_indicator(c))).sum::<f64>() / n;
    if cfg.delta - hard > 0.0 {
        weighted + cfg.beta * (cfg.delta - confs.iter().sum::<f64>() / n)
    } else {
        weighted
    }
}

/// Cross-entropy class weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    /// `w_p = sqrt((P+N) / 2P)`, `w_n = sqrt((P+N) / 2N)`; an absent class
    /// gets weight 0.
    pub fn from_counts(positives: usize, negatives: usize) -> Self {
        let total = (positives + negatives) as f64;
        let w = |count: usize| {
            if count == 0 {
                0.0
            } else {
                (total / (2.0 * count as f64)).sqrt()
            }
        };
        Self {
            positive: w(positives),
            negative: w(negatives),
        }
    }
}

/// Threshold labels: `1` when `L <= epsilon`.
pub fn threshold_labels(losses: &[f64], epsilon: f64) -> Vec<u8> {
    losses.iter().map(|&l| u8::from(l <= epsilon)).collect()
}

/// `mean(conf * L - gamma * (w_p C log conf + w_n (1 - C) log(1 - conf)))`
/// with explicit labels and weights. Labels are constants.
pub fn weighted_ce_objective(
    confs: &[f64],
    losses: &[f64],
    labels: &[u8],
    weights: ClassWeights,
    gamma: f64,
) -> Result<ObjectiveOutput> {
    check_batch(confs, losses)?;
    if labels.len() != confs.len() {
        return Err(Error::dims("threshold labels", confs.len(), labels.len()));
    }
    let n = confs.len() as f64;
    let mut weighted_loss = 0.0;
    let mut ce = 0.0;
    let mut grad_conf = Vec::with_capacity(confs.len());
    for ((&c, &l), &label) in confs.iter().zip(losses).zip(labels) {
        weighted_loss += c * l;
        let clamped = c.clamp(CONF_CLAMP, 1.0 - CONF_CLAMP);
        let inside = c == clamped;
        let d_ce = if label == 1 {
            ce -= weights.positive * clamped.ln();
            if inside {
                -weights.positive / clamped
            } else {
                0.0
            }
        } else {
            ce -= weights.negative * (1.0 - clamped).ln();
            if inside {
                weights.negative / (1.0 - clamped)
            } else {
                0.0
            }
        };
        grad_conf.push((l + gamma * d_ce) / n);
    }
    let weighted_loss = weighted_loss / n;
    let constraint_term = gamma * ce / n;
    Ok(ObjectiveOutput {
        value: weighted_loss + constraint_term,
        weighted_loss,
        constraint_term,
        grad_loss: confs.iter().map(|c| c / n).collect(),
        grad_conf,
        positive_fraction: confs.iter().map(|&c| f64::from(hard_indicator(c))).sum::<f64>()
            / n,
        single_class: false,
    })
}

/// Threshold-constrained objective with batch-derived labels and weights.
/// A batch with only one label class drops the other side's term and is
/// marked `single_class`.
pub fn threshold_objective(
    confs: &[f64],
    losses: &[f64],
    cfg: &ConstraintConfig,
) -> Result<ObjectiveOutput> {
    check_batch(confs, losses)?;
    if cfg.mode != ConstraintMode::Threshold {
        return Err(Error::InvalidConfig("threshold objective needs threshold mode".into()));
    }
    let labels = threshold_labels(losses, cfg.epsilon);
    let positives = labels.iter().filter(|&&c| c == 1).count();
    let weights = ClassWeights::from_counts(positives, labels.len() - positives);
    let mut out = weighted_ce_objective(confs, losses, &labels, weights, cfg.gamma)?;
    out.single_class = positives == 0 || positives == labels.len();
    Ok(out)
}

/// Dispatches on the constraint mode.
pub fn joint_objective(
    confs: &[f64],
    losses: &[f64],
    cfg: &ConstraintConfig,
) -> Result<ObjectiveOutput> {
    match cfg.mode {
        ConstraintMode::Percentile => percentile_objective(confs, losses, cfg),
        ConstraintMode::Threshold => threshold_objective(confs, losses, cfg),
    }
}
