//! Per-item brute-force recomputation of the metric report.

use price_suggest::data::Status;
use price_suggest::metrics::{compute_metrics_raw, ItemOutcome};
use price_suggest::objectives::{RangeLossParams, RangeMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hinge(p: f64, lo: f64, hi: f64) -> (f64, f64) {
    ((lo - p).max(0.0), (p - hi).max(0.0))
}

/// Compares [`compute_metrics_raw`] with a per-item recomputation on
/// `sets` random prediction sets in both range modes. Returns the largest
/// decomposition residual seen.
pub fn check_random_sets(sets: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for set in 0..sets {
        let rp = RangeLossParams {
            mode: if set % 2 == 0 { RangeMode::MultiplicativeLog } else { RangeMode::AdditiveLog },
            ..RangeLossParams::default()
        };
        let n = rng.random_range(0..60);
        let outcomes: Vec<ItemOutcome> = (0..n)
            .map(|_| ItemOutcome {
                status: if rng.random_bool(0.68) { Status::Sold } else { Status::Unsold },
                log_price: rng.random_range(0.5..6.0),
            })
            .collect();
        let preds: Vec<f64> = outcomes.iter().map(|o| o.log_price + rng.random_range(-1.5..1.5)).collect();
        let r = compute_metrics_raw(&preds, &outcomes, &rp).unwrap();

        // Sums and counts per (status, side).
        let mut acc = [[0.0f64; 3]; 2];
        let mut cnt = [[0usize; 3]; 2];
        for (&p, o) in preds.iter().zip(&outcomes) {
            let (lo, hi) = match (o.status, rp.mode) {
                (Status::Sold, RangeMode::MultiplicativeLog) => (o.log_price, 1.2 * o.log_price),
                (Status::Sold, RangeMode::AdditiveLog) => (o.log_price, o.log_price + 1.2f64.ln()),
                (Status::Unsold, RangeMode::MultiplicativeLog) => (o.log_price / 1.2, o.log_price),
                (Status::Unsold, RangeMode::AdditiveLog) => (o.log_price - 1.2f64.ln(), o.log_price),
            };
            let s = usize::from(o.status == Status::Unsold);
            let (below, above) = hinge(p, lo, hi);
            cnt[s][0] += 1;
            acc[s][0] += below + above;
            if below > 0.0 {
                cnt[s][1] += 1;
                acc[s][1] += below;
            }
            if above > 0.0 {
                cnt[s][2] += 1;
                acc[s][2] += above;
            }
        }
        let mean = |s: usize, k: usize| if cnt[s][k] == 0 { 0.0 } else { acc[s][k] / cnt[s][k] as f64 };
        let got = [r.smle, r.spdmle, r.spimle, r.umle, r.updmle, r.upimle];
        let want = [mean(0, 0), mean(0, 1), mean(0, 2), mean(1, 0), mean(1, 1), mean(1, 2)];
        for (g, w) in got.iter().zip(&want) {
            // Bounds are recomputed independently, so allow rounding.
            if (g - w).abs() > 1e-12 * w.abs().max(1.0) {
                return Err(format!("set {set}: {got:?} vs {want:?}"));
            }
        }
        let counts = [cnt[0][0], cnt[0][1], cnt[0][2], cnt[1][0], cnt[1][1], cnt[1][2]];
        if [r.i1, r.i2, r.i3, r.i4, r.i5, r.i6] != counts {
            return Err(format!("set {set}: counts {r:?} vs {counts:?}"));
        }
        if r.decomposition_residual() > 1e-12 {
            return Err(format!("set {set}: decomposition residual {r:?}"));
        }
        r.check_invariants().map_err(|e| format!("set {set}: {e}"))?;
        worst = worst.max(r.decomposition_residual());
    }
    Ok(worst)
}

