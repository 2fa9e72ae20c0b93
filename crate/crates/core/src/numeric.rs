//! Dense layers, activations, the Adam optimizer and a finite-difference
//! gradient checker.
//!
//! Everything is `f64`. Dense layers keep weights row-major with shape
//! `(out_dim, in_dim)`; batched calls take one item per row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Gradients of a loss with respect to one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrads {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dims("dense layer bias", weights.nrows(), bias.len()));
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dense layer parameters".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Glorot uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    /// Weights and bias as flat mutable slices.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        )
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::dims("dense forward input", self.in_dim(), x.len()));
        }
        Ok(self.weights.dot(&x) + &self.bias)
    }

    /// Forward pass for a batch with one item per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dims("dense forward input", self.in_dim(), x.ncols()));
        }
        let mut out = x.dot(&self.weights.t());
        out += &self.bias;
        Ok(out)
    }

    /// Returns `(grads, grad_input)` for a single item.
    pub fn backward(
        &self,
        x: ArrayView1<f64>,
        upstream: ArrayView1<f64>,
    ) -> Result<(DenseGrads, Array1<f64>)> {
        let xb = x.insert_axis(Axis(0));
        let ub = upstream.insert_axis(Axis(0));
        let (grads, grad_input) = self.backward_batch(xb, ub)?;
        Ok((grads, grad_input.row(0).to_owned()))
    }

    /// Batched backward pass. Parameter gradients are summed over the rows.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> Result<(DenseGrads, Array2<f64>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dims("dense backward input", self.in_dim(), x.ncols()));
        }
        if upstream.ncols() != self.out_dim() {
            return Err(Error::dims(
                "dense backward upstream",
                self.out_dim(),
                upstream.ncols(),
            ));
        }
        if upstream.nrows() != x.nrows() {
            return Err(Error::dims(
                "dense backward batch",
                x.nrows(),
                upstream.nrows(),
            ));
        }
        let grads = DenseGrads {
            weights: upstream.t().dot(&x).as_standard_layout().into_owned(),
            bias: upstream.sum_axis(Axis(0)),
        };
        let grad_input = upstream.dot(&self.weights);
        Ok((grads, grad_input))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn activation_forward(x: &[f64], kind: Activation) -> Vec<f64> {
    match kind {
        Activation::Relu => x.iter().map(|&v| relu(v)).collect(),
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Softmax => softmax(x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One named parameter block together with its gradient.
pub struct ParamBlock<'a> {
    pub name: &'a str,
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
}

/// Adam moments for a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    timestep: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            timestep: 0,
            first_moment: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one bias-corrected Adam update to every block.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
        }
        if blocks.len() != self.first_moment.len() {
            return Err(Error::dims(
                "adam parameter blocks",
                self.first_moment.len(),
                blocks.len(),
            ));
        }
        for (block, m) in blocks.iter().zip(&self.first_moment) {
            if block.params.len() != m.len() || block.grads.len() != m.len() {
                return Err(Error::dims(
                    format!("adam block `{}`", block.name),
                    m.len(),
                    block.params.len().max(block.grads.len()),
                ));
            }
            if !block.grads.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`", block.name)));
            }
        }

        self.timestep += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.timestep as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((block, m), v) in blocks
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((p, &g), mi), vi) in block
                .params
                .iter_mut()
                .zip(block.grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Central finite-difference gradient checker.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, abs_floor)`.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub step: f64,
    pub tolerance: f64,
    pub abs_floor: f64,
    /// Points whose kink distance is below this are flagged.
    pub kink_margin: f64,
}

impl Default for GradientCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            kink_margin: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub near_kink: bool,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.near_kink && self.max_rel_error < tolerance
    }
}

impl GradientCheck {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    /// Checks every coordinate of `analytic` against finite differences of `f`.
    pub fn run<F>(&self, f: F, point: &[f64], analytic: &[f64]) -> GradCheckReport
    where
        F: FnMut(&[f64]) -> f64,
    {
        let coords: Vec<usize> = (0..point.len()).collect();
        self.run_coords(f, point, analytic, &coords)
    }

    /// Checks only the listed coordinates.
    pub fn run_coords<F>(
        &self,
        mut f: F,
        point: &[f64],
        analytic: &[f64],
        coords: &[usize],
    ) -> GradCheckReport
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert_eq!(point.len(), analytic.len(), "gradient length must match point");
        let mut probe = point.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            checked: 0,
            near_kink: false,
        };
        for &i in coords {
            let orig = probe[i];
            probe[i] = orig + self.step;
            let plus = f(&probe);
            probe[i] = orig - self.step;
            let minus = f(&probe);
            probe[i] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(self.abs_floor);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = err;
                report.worst_index = Some(i);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
        report
    }

    /// Like [`GradientCheck::run`], additionally flagging the report when
    /// `kink_distance(point)` is within `kink_margin` of a branch boundary.
    pub fn run_with_kink_probe<F, K>(
        &self,
        f: F,
        point: &[f64],
        analytic: &[f64],
        kink_distance: K,
    ) -> GradCheckReport
    where
        F: FnMut(&[f64]) -> f64,
        K: Fn(&[f64]) -> f64,
    {
        let mut report = self.run(f, point, analytic);
        report.near_kink = kink_distance(point) < self.kink_margin;
        report
    }
}
