//! Analytic gradients against central finite differences (step 1e-5) at
//! random points away from ReLU, range and indicator kinks.

use super::{random_batch, tiny_arch};
use ndarray::Array2;
use price_suggest::data::Status;
use price_suggest::features::{assemble_backward, assemble_batch, Ablation, EmbeddingTable, FusionLayer, InputBatch};
use price_suggest::metrics::ItemOutcome;
use price_suggest::model::{HeadKind, HeadParams};
use price_suggest::numeric::{DenseLayer, GradientCheck};
use price_suggest::objectives::{
    percentile_objective, percentile_surrogate, range_kink_distance, range_loss,
    threshold_objective, ConstraintConfig, RangeLossParams, RangeMode,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 100;
pub const TOL: f64 = 1e-4;
/// Parameter steps of 1e-5 move pre-activations by far less than this.
const MARGIN: f64 = 1e-3;

fn check() -> GradientCheck {
    GradientCheck::default()
}

fn ablation_for(i: usize) -> Ablation {
    [Ablation::None, Ablation::NoImage, Ablation::NoText, Ablation::NoAttention][i % 4]
}

fn weighted_output(head: &HeadParams, batch: &InputBatch, ablation: Ablation, upstream: &[f64]) -> f64 {
    let out = head.predict(batch, ablation).unwrap();
    out.iter().zip(upstream).map(|(o, u)| o * u).sum()
}

/// Worst relative error over [`POINTS`] points of one head, or the first
/// failing point.
pub fn head_points(kind: HeadKind, seed: u64) -> Result<f64, String> {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < POINTS {
        let head = HeadParams::init(kind, &arch, &mut rng);
        let n = rng.random_range(1..4);
        let batch = random_batch(&mut rng, &arch, n);
        let ablation = ablation_for(done);
        let cache = head.forward(&batch, ablation).unwrap();
        if cache.min_abs_preactivation() < MARGIN {
            continue;
        }
        let upstream: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let analytic = head.backward(&cache, &upstream).unwrap().flatten();
        let point = head.flatten();
        let mut probe = head.clone();
        let report = check().run(
            |theta| {
                probe.set_flat(theta).unwrap();
                weighted_output(&probe, &batch, ablation, &upstream)
            },
            &point,
            &analytic,
        );
        if !report.passed(TOL) {
            return Err(format!("{kind:?} point {done} ({ablation:?}): {report:?}"));
        }
        worst = worst.max(report.max_rel_error);
        done += 1;
    }
    Ok(worst)
}

pub fn fusion_points(seed: u64) -> Result<f64, String> {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let fusion_in = arch.visual_dim + arch.textual_dim();
    for p in 0..POINTS {
        let ablation = [Ablation::None, Ablation::NoImage, Ablation::NoText][p % 3];
        let embedding = EmbeddingTable::random(arch.vocab_size, arch.embed_dim, &mut rng);
        let fusion = FusionLayer::new(DenseLayer::glorot_uniform(fusion_in, 2, &mut rng)).unwrap();
        let batch = random_batch(&mut rng, &arch, 2);
        let assembled = assemble_batch(&batch, &embedding, &fusion, ablation).unwrap();
        let g = Array2::from_shape_simple_fn(assembled.input.raw_dim(), || rng.random_range(-1.0..1.0));
        let (grad_table, grad_fusion) =
            assemble_backward(&assembled, &batch.tokens, g.view(), &embedding, &fusion, ablation).unwrap();

        // Parameters: trainable embedding rows, fusion weights, fusion bias.
        let dim = arch.embed_dim;
        let mut point: Vec<f64> = embedding.table().iter().skip(dim).copied().collect();
        point.extend(fusion.projection().weights().iter());
        point.extend(fusion.projection().bias().iter());
        let mut analytic: Vec<f64> = grad_table.iter().skip(dim).copied().collect();
        analytic.extend(grad_fusion.weights.iter());
        analytic.extend(grad_fusion.bias.iter());

        let (mut emb, mut fus) = (embedding.clone(), fusion.clone());
        let n_emb = emb.table().len() - dim;
        let n_w = fus.projection().weights().len();
        let report = check().run(
            |theta| {
                emb.trainable_rows_mut().copy_from_slice(&theta[..n_emb]);
                let (w, b) = fus.projection_mut().params_mut();
                w.copy_from_slice(&theta[n_emb..n_emb + n_w]);
                b.copy_from_slice(&theta[n_emb + n_w..]);
                let a = assemble_batch(&batch, &emb, &fus, ablation).unwrap();
                (&a.input * &g).sum()
            },
            &point,
            &analytic,
        );
        if !report.passed(TOL) {
            return Err(format!("fusion point {p} ({ablation:?}): {report:?}"));
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

/// Joint objective through both heads, as a function of all parameters.
struct JointCase {
    classifier: HeadParams,
    regressor: HeadParams,
    batch: InputBatch,
    outcomes: Vec<ItemOutcome>,
    rp: RangeLossParams,
    cfg: ConstraintConfig,
}

impl JointCase {
    fn losses(&self, regressor: &HeadParams) -> Vec<f64> {
        let prices = regressor.predict(&self.batch, Ablation::None).unwrap();
        prices
            .iter()
            .zip(&self.outcomes)
            .map(|(&p, o)| range_loss(o.status, p, o.log_price, &self.rp).0)
            .collect()
    }

    fn value(&self, classifier: &HeadParams, regressor: &HeadParams) -> f64 {
        let confs = classifier.predict(&self.batch, Ablation::None).unwrap().to_vec();
        let losses = self.losses(regressor);
        match self.cfg.mode {
            price_suggest::objectives::ConstraintMode::Percentile => {
                percentile_surrogate(&confs, &losses, &self.cfg)
            }
            price_suggest::objectives::ConstraintMode::Threshold => {
                threshold_objective(&confs, &losses, &self.cfg).unwrap().value
            }
        }
    }
}

fn random_joint_case(rng: &mut ChaCha8Rng, cfg: ConstraintConfig) -> Option<(JointCase, Vec<f64>)> {
    let arch = tiny_arch();
    let classifier = HeadParams::init(HeadKind::Classifier, &arch, rng);
    let regressor = HeadParams::init(HeadKind::Regressor, &arch, rng);
    let n = rng.random_range(3..7);
    let batch = random_batch(rng, &arch, n);
    let rp = RangeLossParams {
        mode: if rng.random() { RangeMode::MultiplicativeLog } else { RangeMode::AdditiveLog },
        ..RangeLossParams::default()
    };
    let cache_c = classifier.forward(&batch, Ablation::None).unwrap();
    let cache_r = regressor.forward(&batch, Ablation::None).unwrap();
    if cache_c.min_abs_preactivation() < MARGIN || cache_r.min_abs_preactivation() < MARGIN {
        return None;
    }
    let prices = cache_r.output().to_vec();
    let confs = cache_c.output().to_vec();
    if confs.iter().any(|c| (c - 0.5).abs() < MARGIN) {
        return None;
    }
    let outcomes: Vec<ItemOutcome> = prices
        .iter()
        .map(|&p| ItemOutcome {
            status: if rng.random() { Status::Sold } else { Status::Unsold },
            log_price: p + rng.random_range(-0.6..0.6),
        })
        .collect();
    for (&p, o) in prices.iter().zip(&outcomes) {
        if range_kink_distance(o.status, p, o.log_price, &rp) < MARGIN {
            return None;
        }
    }
    let (losses, subgrads): (Vec<f64>, Vec<f64>) = prices
        .iter()
        .zip(&outcomes)
        .map(|(&p, o)| range_loss(o.status, p, o.log_price, &rp))
        .unzip();
    if losses.iter().any(|l| (l - cfg.epsilon).abs() < MARGIN) {
        return None;
    }
    let obj = match cfg.mode {
        price_suggest::objectives::ConstraintMode::Percentile => percentile_objective(&confs, &losses, &cfg),
        price_suggest::objectives::ConstraintMode::Threshold => threshold_objective(&confs, &losses, &cfg),
    }
    .unwrap();
    let upstream_r: Vec<f64> = obj.grad_loss.iter().zip(&subgrads).map(|(g, s)| g * s).collect();
    let mut analytic = classifier.backward(&cache_c, &obj.grad_conf).unwrap().flatten();
    analytic.extend(regressor.backward(&cache_r, &upstream_r).unwrap().flatten());
    Some((
        JointCase {
            classifier,
            regressor,
            batch,
            outcomes,
            rp,
            cfg,
        },
        analytic,
    ))
}

fn joint_points(make_cfg: impl Fn(&mut ChaCha8Rng) -> ConstraintConfig, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < POINTS {
        let cfg = make_cfg(&mut rng);
        let Some((case, analytic)) = random_joint_case(&mut rng, cfg) else {
            continue;
        };
        let n_c = case.classifier.param_count();
        let mut point = case.classifier.flatten();
        point.extend(case.regressor.flatten());
        let coords: Vec<usize> = sample(&mut rng, point.len(), 200).into_vec();
        let (mut c, mut r) = (case.classifier.clone(), case.regressor.clone());
        let report = check().run_coords(
            |theta| {
                c.set_flat(&theta[..n_c]).unwrap();
                r.set_flat(&theta[n_c..]).unwrap();
                case.value(&c, &r)
            },
            &point,
            &analytic,
            &coords,
        );
        if !report.passed(TOL) {
            return Err(format!("{:?} point {done}: {report:?}", case.cfg));
        }
        worst = worst.max(report.max_rel_error);
        done += 1;
    }
    Ok(worst)
}

pub fn percentile_joint_points(seed: u64) -> Result<f64, String> {
    joint_points(
        |rng| ConstraintConfig::percentile(rng.random_range(0.1..0.95), rng.random_range(0.1..5.0)),
        seed,
    )
}

pub fn threshold_joint_points(seed: u64) -> Result<f64, String> {
    joint_points(
        |rng| ConstraintConfig::threshold(rng.random_range(0.05..0.3), rng.random_range(0.1..5.0)),
        seed,
    )
}
