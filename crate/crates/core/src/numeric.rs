//! Dense matrices, multi-layer perceptrons with an explicit reverse pass,
//! a central-difference gradient checker and an Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of finite `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
                context: "matrix values",
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                    context: "matrix row",
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `out += self[:, cols] · x` where `cols` is a contiguous column block of width `x.len()`.
    pub fn gemv_block_acc(&self, col_start: usize, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows);
        debug_assert!(col_start + x.len() <= self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.values[r * self.cols + col_start..r * self.cols + col_start + x.len()];
            *o += dot(row, x);
        }
    }

    /// `out += self[:, cols]ᵀ · y` for the same column block convention.
    pub fn gemv_t_block_acc(&self, col_start: usize, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.values[r * self.cols + col_start..r * self.cols + col_start + out.len()];
            for (o, w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
    }

    /// `self[:, cols] += a · xᵀ` (rank-one update of a column block).
    pub fn add_outer_block(&mut self, col_start: usize, a: &[f64], x: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let row = &mut self.values[r * self.cols + col_start..r * self.cols + col_start + x.len()];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += ar * xv;
            }
        }
    }
}

/// Inner product with eight interleaved partial sums, combined pairwise.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `activation(weights · x + bias)`; weights are `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        self.weights.gemv_block_acc(0, x, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: l.output_dim(),
                    got: l.bias.len(),
                    context: "layer bias",
                });
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                    context: "consecutive layers",
                });
            }
        }
        Ok(Self { layers })
    }

    /// Hidden layers use ReLU, the output layer is linear. Weights are drawn
    /// uniformly in `±sqrt(6 / (fan_in + fan_out))`, biases start at zero.
    pub fn glorot(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let values = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                Layer {
                    weights: DenseMatrix {
                        rows: fan_out,
                        cols: fan_in,
                        values,
                    },
                    bias: vec![0.0; fan_out],
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.values.len() + l.bias.len()).sum()
    }

    /// Parameters in a fixed order: per layer, weights row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.values.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.values.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Cached per-layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpTape {
    /// Sign pattern of every ReLU unit, for detecting kinks in finite differences.
    pub fn relu_signature(&self, layers: &[Layer], hasher: &mut impl std::hash::Hasher) {
        for (l, z) in layers.iter().zip(&self.pre) {
            if l.activation == Activation::Relu {
                for v in z {
                    hasher.write_u8(u8::from(*v > 0.0));
                }
            }
        }
    }
}

pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
    if x.len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.input_dim(),
            got: x.len(),
            context: "mlp input",
        });
    }
    let mut tape = MlpTape {
        inputs: Vec::with_capacity(p.layers.len()),
        pre: Vec::with_capacity(p.layers.len()),
    };
    let mut cur = x.to_vec();
    for l in &p.layers {
        let mut z = vec![0.0; l.output_dim()];
        l.affine(&cur, &mut z);
        let next: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
        tape.inputs.push(std::mem::replace(&mut cur, next));
        tape.pre.push(z);
    }
    Ok((cur, tape))
}

/// Reverse pass: accumulates parameter gradients into `grads` and returns `dx`.
pub fn mlp_backward_acc(p: &MlpParams, tape: &MlpTape, dy: &[f64], grads: &mut MlpParams) -> Result<Vec<f64>> {
    if dy.len() != p.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.output_dim(),
            got: dy.len(),
            context: "mlp output gradient",
        });
    }
    if tape.pre.len() != p.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: p.layers.len(),
            got: tape.pre.len(),
            context: "mlp tape",
        });
    }
    let mut delta = dy.to_vec();
    for (i, l) in p.layers.iter().enumerate().rev() {
        for (d, &z) in delta.iter_mut().zip(&tape.pre[i]) {
            *d *= l.activation.derivative(z);
        }
        let g = &mut grads.layers[i];
        g.weights.add_outer_block(0, &delta, &tape.inputs[i]);
        for (b, d) in g.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        let mut dx = vec![0.0; l.input_dim()];
        l.weights.gemv_t_block_acc(0, &delta, &mut dx);
        delta = dx;
    }
    Ok(delta)
}

/// Returns `(dx, dParams)` for a single backward pass.
pub fn mlp_backward(p: &MlpParams, tape: &MlpTape, dy: &[f64]) -> Result<(Vec<f64>, MlpParams)> {
    let mut grads = p.zeros_like();
    let dx = mlp_backward_acc(p, tape, dy, &mut grads)?;
    Ok((dx, grads))
}

/// One evaluation of a function under gradient check.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub value: f64,
    /// Fingerprint of the piecewise-linear region (e.g. ReLU sign pattern);
    /// differences across a central difference mark the parameter as straddling a kink.
    pub region: u64,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Self { value, region: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Parameters skipped because the perturbation crossed a non-differentiable point.
    pub skipped_kinks: usize,
}

/// Denominator floor for relative errors, so that gradients that are zero up to
/// rounding compare as equal.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// The floor also scales with the largest analytic component. A central
/// difference of a loss `f` carries rounding noise of roughly `ε_mach·|f|/eps`
/// in every component, so components many orders below the largest one cannot
/// be resolved to a relative precision.
pub const GRAD_CHECK_RELATIVE_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `f` around `params`.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)` with
/// `floor = max(GRAD_CHECK_FLOOR, GRAD_CHECK_RELATIVE_FLOOR · max_i |a_i|)`.
pub fn grad_check<F, P>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> P,
    P: Into<Probe>,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let center = f(params).into();
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let floor = GRAD_CHECK_FLOOR.max(GRAD_CHECK_RELATIVE_FLOOR * scale);
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus: Probe = f(&x).into();
        x[i] = orig - eps;
        let minus: Probe = f(&x).into();
        x[i] = orig;
        if plus.region != center.region || minus.region != center.region {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; parameter and gradient iterators must visit the same
    /// `n_params` entries in the same order.
    pub fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut n = 0;
        for (((p, g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            n += 1;
        }
        debug_assert_eq!(n, self.m.len());
    }
}
