//! Range-error metrics on log prices.
//!
//! For sold items: SMLE (mean hinge distance to `[p, mu p]`), SPDMLE (mean
//! shortfall over items below the range), SPIMLE (mean excess over items
//! above it). UMLE, UPDMLE and UPIMLE are the unsold analogues on
//! `[nu p, p]`. Items on a boundary count as inside.

use serde::{Deserialize, Serialize};

use crate::data::Status;
use crate::error::{Error, Result};
use crate::model::PredictionOutcome;
use crate::objectives::RangeLossParams;

/// Realized outcome of an item: its status and the corresponding log price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub status: Status,
    pub log_price: f64,
}

/// The six metrics with their population counts.
///
/// `i1`/`i4` count sold/unsold items, `i2`/`i3` sold items below/above
/// range, `i5`/`i6` unsold items below/above range. A mean over an empty
/// population is 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub smle: f64,
    pub spdmle: f64,
    pub spimle: f64,
    pub umle: f64,
    pub updmle: f64,
    pub upimle: f64,
    pub i1: usize,
    pub i2: usize,
    pub i3: usize,
    pub i4: usize,
    pub i5: usize,
    pub i6: usize,
    pub n_items: usize,
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

impl MetricReport {
    /// Largest relative residual of `I1 SMLE = I2 SPDMLE + I3 SPIMLE` and
    /// its unsold analogue.
    pub fn decomposition_residual(&self) -> f64 {
        let rel = |lhs: f64, rhs: f64| (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        let sold = rel(
            self.i1 as f64 * self.smle,
            self.i2 as f64 * self.spdmle + self.i3 as f64 * self.spimle,
        );
        let unsold = rel(
            self.i4 as f64 * self.umle,
            self.i5 as f64 * self.updmle + self.i6 as f64 * self.upimle,
        );
        sold.max(unsold)
    }

    /// Checks count relations and the mean decomposition.
    pub fn check_invariants(&self) -> Result<()> {
        let counts_ok = self.i2 + self.i3 <= self.i1
            && self.i5 + self.i6 <= self.i4
            && self.i1 + self.i4 == self.n_items;
        let means = [
            self.smle,
            self.spdmle,
            self.spimle,
            self.umle,
            self.updmle,
            self.upimle,
        ];
        if !counts_ok || means.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidConfig(format!("inconsistent metric report {self:?}")));
        }
        if self.decomposition_residual() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "metric decomposition violated by {:e}",
                self.decomposition_residual()
            )));
        }
        Ok(())
    }
}

/// Metrics for suggested log prices against realized outcomes.
pub fn compute_metrics_raw(
    suggested: &[f64],
    outcomes: &[ItemOutcome],
    rp: &RangeLossParams,
) -> Result<MetricReport> {
    if suggested.len() != outcomes.len() {
        return Err(Error::dims("metric inputs", outcomes.len(), suggested.len()));
    }
    let mut r = MetricReport {
        n_items: outcomes.len(),
        ..MetricReport::default()
    };
    let (mut sold_dec, mut sold_inc, mut unsold_dec, mut unsold_inc) = (0.0, 0.0, 0.0, 0.0);
    for (&p, o) in suggested.iter().zip(outcomes) {
        let (lo, hi) = rp.target_range(o.status, o.log_price);
        match o.status {
            Status::Sold => {
                r.i1 += 1;
                if p < lo {
                    r.i2 += 1;
                    sold_dec += lo - p;
                } else if p > hi {
                    r.i3 += 1;
                    sold_inc += p - hi;
                }
            }
            Status::Unsold => {
                r.i4 += 1;
                if p < lo {
                    r.i5 += 1;
                    unsold_dec += lo - p;
                } else if p > hi {
                    r.i6 += 1;
                    unsold_inc += p - hi;
                }
            }
        }
    }
    r.smle = mean(sold_dec + sold_inc, r.i1);
    r.spdmle = mean(sold_dec, r.i2);
    r.spimle = mean(sold_inc, r.i3);
    r.umle = mean(unsold_dec + unsold_inc, r.i4);
    r.updmle = mean(unsold_dec, r.i5);
    r.upimle = mean(unsold_inc, r.i6);
    Ok(r)
}

pub fn compute_metrics(
    predictions: &[PredictionOutcome],
    outcomes: &[ItemOutcome],
    rp: &RangeLossParams,
) -> Result<MetricReport> {
    let suggested: Vec<f64> = predictions.iter().map(|p| p.suggested_log_price).collect();
    compute_metrics_raw(&suggested, outcomes, rp)
}

/// Metrics split by the classifier's hard label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_items: usize,
    pub n_positive: usize,
    pub positive_fraction: f64,
    pub positive: MetricReport,
    pub negative: MetricReport,
}

pub fn split_report(
    predictions: &[PredictionOutcome],
    outcomes: &[ItemOutcome],
    rp: &RangeLossParams,
) -> Result<EvaluationReport> {
    if predictions.len() != outcomes.len() {
        return Err(Error::dims("metric inputs", outcomes.len(), predictions.len()));
    }
    let (mut pos_p, mut pos_o, mut neg_p, mut neg_o) = (vec![], vec![], vec![], vec![]);
    for (p, o) in predictions.iter().zip(outcomes) {
        if p.is_positive() {
            pos_p.push(p.suggested_log_price);
            pos_o.push(*o);
        } else {
            neg_p.push(p.suggested_log_price);
            neg_o.push(*o);
        }
    }
    let n = predictions.len();
    Ok(EvaluationReport {
        n_items: n,
        n_positive: pos_p.len(),
        positive_fraction: if n == 0 { 0.0 } else { pos_p.len() as f64 / n as f64 },
        positive: compute_metrics_raw(&pos_p, &pos_o, rp)?,
        negative: compute_metrics_raw(&neg_p, &neg_o, rp)?,
    })
}

/// The multiplicative price ratio a log error stands for.
pub fn log_error_to_ratio(log_error: f64) -> f64 {
    log_error.exp()
}
