//! Edge-featured message-passing network over a [`PlanningSubgraph`].
//!
//! ```text
//! h⁰_v   = encoder(x_v)
//! m_e    = message([hᵗ⁻¹_src, hᵗ⁻¹_dst, edge_e])         for every directed edge
//! hᵗ_v   = update([hᵗ⁻¹_v, Σ_{e→v} m_e])                 t = 1..T
//! ŷ      = μ + σ · readout(hᵀ_target)
//! ```
//!
//! `μ` and `σ` ([`OutputScaling`]) are fixed before training to the mean and
//! standard deviation of the normalized training labels, so the trainable part
//! always fits a target of unit spread. They are not trained.
//!
//! The message MLP is evaluated in a factored form. Its first layer is affine in
//! the concatenated input, so `W [h_s; h_d; e] = W_s h_s + W_d h_d + W_e e` with the
//! node terms computed once per node. Its output layer is linear, so it commutes
//! with the sum: `Σ_e (W r_e + b) = W Σ_e r_e + deg · b`. Only the hidden layers run
//! per edge.
//!
//! Incoming messages are summed in an order fixed by the cell ids of the
//! endpoints, which makes the prediction bit-identical under any reordering of
//! nodes or edges.

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Kpi, NormalizationSpec};
use crate::error::{Error, Result};
use crate::geometry::EDGE_FEATURE_DIM;
use crate::graph::PlanningSubgraph;
use crate::numeric::{mlp_backward_acc, mlp_forward, Activation, Adam, MlpParams, MlpTape, Probe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnHyperparams {
    pub hidden_dim: usize,
    /// Message-passing rounds.
    pub iterations: usize,
    pub encoder_mlp_layers: Vec<usize>,
    pub message_mlp_layers: Vec<usize>,
    pub update_mlp_layers: Vec<usize>,
    pub readout_mlp_layers: Vec<usize>,
    pub learning_rate: f64,
    /// The step size follows a cosine from `learning_rate` down to this fraction of it
    /// over `max_epochs`. 1 keeps it constant.
    #[serde(default = "constant_rate")]
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Edge distances are divided by this before entering the network (meters).
    pub distance_scale: f64,
}

impl Default for GnnHyperparams {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            iterations: 2,
            encoder_mlp_layers: vec![32],
            message_mlp_layers: vec![32],
            update_mlp_layers: vec![32],
            readout_mlp_layers: vec![32],
            learning_rate: 3e-3,
            final_lr_fraction: 0.05,
            batch_size: 16,
            max_epochs: 20,
            early_stop_patience: 5,
            distance_scale: 500.0,
        }
    }
}

fn constant_rate() -> f64 {
    1.0
}

impl GnnHyperparams {
    /// Step size for the given fraction of training completed, in [0, 1].
    pub fn learning_rate_at(&self, progress: f64) -> f64 {
        let f = self.final_lr_fraction;
        let c = 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos());
        self.learning_rate * (f + (1.0 - f) * c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        if self.message_mlp_layers.is_empty() {
            return bad("message MLP needs at least one hidden layer");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must be in (0, 1]");
        }
        if !(self.distance_scale > 0.0) {
            return bad("distance_scale must be positive");
        }
        Ok(())
    }
}

/// Fixed affine map applied to the readout output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub shift: f64,
    pub scale: f64,
}

impl Default for OutputScaling {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl OutputScaling {
    /// Mean and population standard deviation of `labels`, the latter floored at 1e-6.
    pub fn fit(labels: &[f64]) -> Self {
        if labels.is_empty() {
            return Self::default();
        }
        let n = labels.len() as f64;
        let shift = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|y| (y - shift).powi(2)).sum::<f64>() / n;
        Self {
            shift,
            scale: var.sqrt().max(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParameters {
    pub hyper: GnnHyperparams,
    pub node_dim: usize,
    pub encoder: MlpParams,
    pub message: MlpParams,
    pub update: MlpParams,
    pub readout: MlpParams,
    #[serde(default)]
    pub output: OutputScaling,
}

impl GnnParameters {
    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.message.param_count() + self.update.param_count() + self.readout.param_count()
    }

    /// Every trainable value in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.encoder
            .iter()
            .chain(self.message.iter())
            .chain(self.update.iter())
            .chain(self.readout.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.encoder
            .iter_mut()
            .chain(self.message.iter_mut())
            .chain(self.update.iter_mut())
            .chain(self.readout.iter_mut())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hyper: self.hyper.clone(),
            node_dim: self.node_dim,
            encoder: self.encoder.zeros_like(),
            message: self.message.zeros_like(),
            update: self.update.zeros_like(),
            readout: self.readout.zeros_like(),
            output: self.output,
        }
    }

    pub fn add_assign(&mut self, other: &GnnParameters) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Shape checks for parameters coming from a checkpoint.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let h = self.hyper.hidden_dim;
        let check = |expected: usize, got: usize, context: &'static str| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, got, context })
            }
        };
        for mlp in [&self.encoder, &self.message, &self.update, &self.readout] {
            MlpParams::new(mlp.layers.clone())?;
        }
        check(self.node_dim, self.encoder.input_dim(), "encoder input")?;
        check(h, self.encoder.output_dim(), "encoder output")?;
        check(2 * h + EDGE_FEATURE_DIM, self.message.input_dim(), "message input")?;
        check(h, self.message.output_dim(), "message output")?;
        check(2 * h, self.update.input_dim(), "update input")?;
        check(h, self.update.output_dim(), "update output")?;
        check(h, self.readout.input_dim(), "readout input")?;
        check(1, self.readout.output_dim(), "readout output")?;
        if self.message.layers.len() < 2 {
            return Err(Error::InvalidConfig("message MLP needs a hidden layer".into()));
        }
        if self.message.layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::InvalidConfig("message MLP output must be linear".into()));
        }
        if !(self.is_finite() && self.output.shift.is_finite() && self.output.scale.is_finite() && self.output.scale > 0.0) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_params(hp: &GnnHyperparams, node_dim: usize, seed: u64) -> Result<GnnParameters> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = hp.hidden_dim;
    Ok(GnnParameters {
        hyper: hp.clone(),
        node_dim,
        encoder: MlpParams::glorot(node_dim, &hp.encoder_mlp_layers, h, &mut rng),
        message: MlpParams::glorot(2 * h + EDGE_FEATURE_DIM, &hp.message_mlp_layers, h, &mut rng),
        update: MlpParams::glorot(2 * h, &hp.update_mlp_layers, h, &mut rng),
        readout: MlpParams::glorot(h, &hp.readout_mlp_layers, 1, &mut rng),
        output: OutputScaling::default(),
    })
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Default)]
struct Tape {
    /// Edge indices in summation order.
    order: Vec<usize>,
    edge_features: Vec<[f64; EDGE_FEATURE_DIM]>,
    in_degree: Vec<f64>,
    encoder: Vec<MlpTape>,
    rounds: Vec<RoundTape>,
    readout: MlpTape,
}

#[derive(Debug, Default)]
struct RoundTape {
    /// Node states entering the round, `n × H`.
    h_in: Vec<f64>,
    /// Pre-activations of every per-edge message layer, `E × width` each.
    edge_pre: Vec<Vec<f64>>,
    /// Per-node sums of the last hidden message layer.
    sums: Vec<f64>,
    update: Vec<MlpTape>,
}

fn check_graph(params: &GnnParameters, g: &PlanningSubgraph) -> Result<()> {
    if g.nodes.is_empty() {
        return Err(Error::InvalidConfig("subgraph has no nodes".into()));
    }
    for v in &g.nodes {
        if v.features.len() != params.node_dim {
            return Err(Error::DimensionMismatch {
                expected: params.node_dim,
                got: v.features.len(),
                context: "node features",
            });
        }
    }
    let n = g.nodes.len();
    if g.edges.iter().any(|e| e.src >= n || e.dst >= n) {
        return Err(Error::InvalidConfig("edge endpoint out of range".into()));
    }
    Ok(())
}

/// Edge order sorted by `(cell_id of dst, cell_id of src)`.
fn summation_order(g: &PlanningSubgraph) -> Vec<usize> {
    let mut by_id: Vec<usize> = (0..g.nodes.len()).collect();
    by_id.sort_by(|&a, &b| g.nodes[a].cell_id.cmp(&g.nodes[b].cell_id).then(a.cmp(&b)));
    let mut rank = vec![0usize; g.nodes.len()];
    for (r, &v) in by_id.iter().enumerate() {
        rank[v] = r;
    }
    // counting sort on the (dst, src) rank pair; stable for parallel edges
    let n = g.nodes.len();
    let key = |i: usize| rank[g.edges[i].dst] * n + rank[g.edges[i].src];
    let mut start = vec![0usize; n * n + 1];
    for i in 0..g.edges.len() {
        start[key(i) + 1] += 1;
    }
    for k in 0..n * n {
        start[k + 1] += start[k];
    }
    let mut order = vec![0usize; g.edges.len()];
    for i in 0..g.edges.len() {
        let k = key(i);
        order[start[k]] = i;
        start[k] += 1;
    }
    order
}

/// Columns `col_start..col_start + EDGE_FEATURE_DIM` of `layer`, stored column-major.
fn edge_block_transposed(layer: &crate::numeric::Layer, col_start: usize) -> Vec<f64> {
    let rows = layer.output_dim();
    let mut out = vec![0.0; EDGE_FEATURE_DIM * rows];
    for r in 0..rows {
        for k in 0..EDGE_FEATURE_DIM {
            out[k * rows + r] = layer.weights.get(r, col_start + k);
        }
    }
    out
}

fn run_forward(params: &GnnParameters, g: &PlanningSubgraph, keep: bool) -> Result<(f64, Tape)> {
    check_graph(params, g)?;
    let h = params.hyper.hidden_dim;
    let n = g.nodes.len();
    let mut tape = Tape {
        order: summation_order(g),
        edge_features: g
            .edges
            .iter()
            .map(|e| e.geometry.features(params.hyper.distance_scale))
            .collect(),
        in_degree: vec![0.0; n],
        ..Default::default()
    };
    for e in g.edges.iter() {
        tape.in_degree[e.dst] += 1.0;
    }

    let mut state = vec![0.0; n * h];
    for (v, node) in g.nodes.iter().enumerate() {
        let (out, t) = mlp_forward(&params.encoder, &node.features)?;
        state[v * h..(v + 1) * h].copy_from_slice(&out);
        if keep {
            tape.encoder.push(t);
        }
    }

    let layers = &params.message.layers;
    let first = &layers[0];
    let last = &layers[layers.len() - 1];
    let per_edge = &layers[1..layers.len() - 1];
    let w0 = first.output_dim();
    let sum_width = last.input_dim();

    let we_t = edge_block_transposed(first, 2 * h);

    for _ in 0..params.hyper.iterations {
        // node terms of the first message layer
        let mut src_term = vec![0.0; n * w0];
        let mut dst_term = vec![0.0; n * w0];
        for v in 0..n {
            let hv = &state[v * h..(v + 1) * h];
            first.weights.gemv_block_acc(0, hv, &mut src_term[v * w0..(v + 1) * w0]);
            first.weights.gemv_block_acc(h, hv, &mut dst_term[v * w0..(v + 1) * w0]);
        }
        let mut edge_pre: Vec<Vec<f64>> = if keep {
            std::iter::once(w0)
                .chain(per_edge.iter().map(|l| l.output_dim()))
                .map(|w| vec![0.0; g.edges.len() * w])
                .collect()
        } else {
            Vec::new()
        };
        let mut sums = vec![0.0; n * sum_width];
        let mut z = vec![0.0; w0];
        let mut act = Vec::with_capacity(w0);
        for &ei in &tape.order {
            let e = &g.edges[ei];
            let s = &src_term[e.src * w0..(e.src + 1) * w0];
            let d = &dst_term[e.dst * w0..(e.dst + 1) * w0];
            for (((zv, s), d), b) in z.iter_mut().zip(s).zip(d).zip(&first.bias) {
                *zv = s + d + b;
            }
            for (k, &fk) in tape.edge_features[ei].iter().enumerate() {
                if fk != 0.0 {
                    for (zv, w) in z.iter_mut().zip(&we_t[k * w0..(k + 1) * w0]) {
                        *zv += fk * w;
                    }
                }
            }
            if keep {
                edge_pre[0][ei * w0..(ei + 1) * w0].copy_from_slice(&z);
            }
            if per_edge.is_empty() {
                let acc = &mut sums[e.dst * w0..(e.dst + 1) * w0];
                match first.activation {
                    Activation::Relu => acc.iter_mut().zip(&z).for_each(|(a, &zv)| *a += zv.max(0.0)),
                    Activation::Identity => acc.iter_mut().zip(&z).for_each(|(a, &zv)| *a += zv),
                }
                continue;
            }
            act.clear();
            act.extend(z.iter().map(|&v| first.activation.apply(v)));
            for (li, l) in per_edge.iter().enumerate() {
                let mut zl = vec![0.0; l.output_dim()];
                l.affine(&act, &mut zl);
                if keep {
                    let w = l.output_dim();
                    edge_pre[li + 1][ei * w..(ei + 1) * w].copy_from_slice(&zl);
                }
                act.clear();
                act.extend(zl.iter().map(|&v| l.activation.apply(v)));
            }
            for (acc, a) in sums[e.dst * sum_width..(e.dst + 1) * sum_width].iter_mut().zip(&act) {
                *acc += a;
            }
        }

        let mut next = vec![0.0; n * h];
        let mut update_tapes = Vec::with_capacity(if keep { n } else { 0 });
        let mut input = vec![0.0; 2 * h];
        for v in 0..n {
            input[..h].copy_from_slice(&state[v * h..(v + 1) * h]);
            let agg = &mut input[h..];
            for (k, a) in agg.iter_mut().enumerate() {
                *a = tape.in_degree[v] * last.bias[k];
            }
            last.weights.gemv_block_acc(0, &sums[v * sum_width..(v + 1) * sum_width], agg);
            let (out, t) = mlp_forward(&params.update, &input)?;
            next[v * h..(v + 1) * h].copy_from_slice(&out);
            if keep {
                update_tapes.push(t);
            }
        }
        let h_in = std::mem::replace(&mut state, next);
        if keep {
            tape.rounds.push(RoundTape {
                h_in,
                edge_pre,
                sums,
                update: update_tapes,
            });
        }
    }

    let t = PlanningSubgraph::TARGET;
    let (y, rt) = mlp_forward(&params.readout, &state[t * h..(t + 1) * h])?;
    tape.readout = rt;
    Ok((params.output.shift + params.output.scale * y[0], tape))
}

/// Normalized prediction at the target node.
pub fn forward(params: &GnnParameters, g: &PlanningSubgraph) -> Result<f64> {
    Ok(run_forward(params, g, false)?.0)
}

/// Accumulates `d(output)/d(params) · dy` into `grads`.
fn backward(params: &GnnParameters, g: &PlanningSubgraph, tape: &Tape, dy: f64, grads: &mut GnnParameters) -> Result<()> {
    let h = params.hyper.hidden_dim;
    let n = g.nodes.len();
    let t = PlanningSubgraph::TARGET;
    let mut dstate = vec![0.0; n * h];
    let dh_target = mlp_backward_acc(&params.readout, &tape.readout, &[params.output.scale * dy], &mut grads.readout)?;
    dstate[t * h..(t + 1) * h].copy_from_slice(&dh_target);

    let layers = &params.message.layers;
    let n_layers = layers.len();
    let first = &layers[0];
    let last = &layers[n_layers - 1];
    let w0 = first.output_dim();
    let sum_width = last.input_dim();

    for round in tape.rounds.iter().rev() {
        let mut dprev = vec![0.0; n * h];
        let mut dsums = vec![0.0; n * sum_width];
        for v in 0..n {
            let dv = &dstate[v * h..(v + 1) * h];
            let dx = mlp_backward_acc(&params.update, &round.update[v], dv, &mut grads.update)?;
            for (p, d) in dprev[v * h..(v + 1) * h].iter_mut().zip(&dx[..h]) {
                *p += d;
            }
            let dagg = &dx[h..];
            let gl = grads.message.layers.last_mut().expect("message layers");
            gl.weights
                .add_outer_block(0, dagg, &round.sums[v * sum_width..(v + 1) * sum_width]);
            for (b, d) in gl.bias.iter_mut().zip(dagg) {
                *b += tape.in_degree[v] * d;
            }
            last.weights
                .gemv_t_block_acc(0, dagg, &mut dsums[v * sum_width..(v + 1) * sum_width]);
        }

        let mut dsrc = vec![0.0; n * w0];
        let mut ddst = vec![0.0; n * w0];
        let mut g_we_t = vec![0.0; EDGE_FEATURE_DIM * w0];
        let mut delta: Vec<f64> = Vec::new();
        for &ei in &tape.order {
            let e = &g.edges[ei];
            delta.clear();
            delta.extend_from_slice(&dsums[e.dst * sum_width..(e.dst + 1) * sum_width]);
            // hidden message layers after the first, in reverse
            for li in (1..n_layers - 1).rev() {
                let l = &layers[li];
                let w = l.output_dim();
                let pre = &round.edge_pre[li][ei * w..(ei + 1) * w];
                for (d, &zv) in delta.iter_mut().zip(pre) {
                    *d *= l.activation.derivative(zv);
                }
                let prev_w = layers[li - 1].output_dim();
                let prev_pre = &round.edge_pre[li - 1][ei * prev_w..(ei + 1) * prev_w];
                let prev_act: Vec<f64> = prev_pre
                    .iter()
                    .map(|&zv| layers[li - 1].activation.apply(zv))
                    .collect();
                let gl = &mut grads.message.layers[li];
                gl.weights.add_outer_block(0, &delta, &prev_act);
                for (b, d) in gl.bias.iter_mut().zip(&delta) {
                    *b += d;
                }
                let mut dx = vec![0.0; prev_w];
                l.weights.gemv_t_block_acc(0, &delta, &mut dx);
                delta = dx;
            }
            let pre0 = &round.edge_pre[0][ei * w0..(ei + 1) * w0];
            if first.activation == Activation::Relu {
                for (d, &zv) in delta.iter_mut().zip(pre0) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            for (k, &fk) in tape.edge_features[ei].iter().enumerate() {
                if fk != 0.0 {
                    for (gw, d) in g_we_t[k * w0..(k + 1) * w0].iter_mut().zip(&delta) {
                        *gw += fk * d;
                    }
                }
            }
            for (acc, d) in dsrc[e.src * w0..(e.src + 1) * w0].iter_mut().zip(&delta) {
                *acc += d;
            }
            for (acc, d) in ddst[e.dst * w0..(e.dst + 1) * w0].iter_mut().zip(&delta) {
                *acc += d;
            }
        }
        let g0 = &mut grads.message.layers[0];
        for r in 0..w0 {
            for k in 0..EDGE_FEATURE_DIM {
                let c = 2 * h + k;
                g0.weights.set(r, c, g0.weights.get(r, c) + g_we_t[k * w0 + r]);
            }
        }
        // the bias enters every edge once, so its gradient is the sum over destinations
        for v in 0..n {
            for (b, d) in g0.bias.iter_mut().zip(&ddst[v * w0..(v + 1) * w0]) {
                *b += d;
            }
        }
        for v in 0..n {
            let hv = &round.h_in[v * h..(v + 1) * h];
            let ds = &dsrc[v * w0..(v + 1) * w0];
            let dd = &ddst[v * w0..(v + 1) * w0];
            let g0 = &mut grads.message.layers[0];
            g0.weights.add_outer_block(0, ds, hv);
            g0.weights.add_outer_block(h, dd, hv);
            let dp = &mut dprev[v * h..(v + 1) * h];
            first.weights.gemv_t_block_acc(0, ds, dp);
            first.weights.gemv_t_block_acc(h, dd, dp);
        }
        dstate = dprev;
    }

    for v in 0..n {
        mlp_backward_acc(&params.encoder, &tape.encoder[v], &dstate[v * h..(v + 1) * h], &mut grads.encoder)?;
    }
    Ok(())
}

/// Squared error on normalized values.
pub fn loss(prediction: f64, label: f64) -> f64 {
    (prediction - label).powi(2)
}

/// Loss and its gradient for one labelled subgraph.
pub fn loss_and_grad(params: &GnnParameters, g: &PlanningSubgraph, label: f64) -> Result<(f64, GnnParameters)> {
    let mut grads = params.zeros_like();
    let l = accumulate_grad(params, g, label, 1.0, &mut grads)?;
    Ok((l, grads))
}

fn accumulate_grad(params: &GnnParameters, g: &PlanningSubgraph, label: f64, weight: f64, grads: &mut GnnParameters) -> Result<f64> {
    let (y, tape) = run_forward(params, g, true)?;
    backward(params, g, &tape, weight * 2.0 * (y - label), grads)?;
    Ok(loss(y, label))
}

/// Loss plus a fingerprint of every ReLU sign in the pass, for gradient checking.
pub fn probe(params: &GnnParameters, g: &PlanningSubgraph, label: f64) -> Result<Probe> {
    let (y, tape) = run_forward(params, g, true)?;
    let mut hasher = std::hash::DefaultHasher::new();
    for t in &tape.encoder {
        t.relu_signature(&params.encoder.layers, &mut hasher);
    }
    let layers = &params.message.layers;
    for round in &tape.rounds {
        for (li, pre) in round.edge_pre.iter().enumerate() {
            if layers[li].activation == Activation::Relu {
                for v in pre {
                    hasher.write_u8(u8::from(*v > 0.0));
                }
            }
        }
        for t in &round.update {
            t.relu_signature(&params.update.layers, &mut hasher);
        }
    }
    tape.readout.relu_signature(&params.readout.layers, &mut hasher);
    Ok(Probe {
        value: loss(y, label),
        region: hasher.finish(),
    })
}

/// Optimizer state carried across steps.
#[derive(Debug, Clone)]
pub struct GnnOptimizer {
    adam: Adam,
}

impl GnnOptimizer {
    pub fn new(params: &GnnParameters) -> Self {
        Self {
            adam: Adam::new(params.param_count(), params.hyper.learning_rate),
        }
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.adam.learning_rate = lr;
    }
}

/// One Adam step on the mean squared error of `batch`. Returns the mean batch loss.
pub fn train_step(
    params: &mut GnnParameters,
    batch: &[(&PlanningSubgraph, f64)],
    opt: &mut GnnOptimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut grads = params.zeros_like();
    let w = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (g, label) in batch {
        total += accumulate_grad(params, g, *label, w, &mut grads)?;
    }
    let mean = total * w;
    if !mean.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: opt.steps() as usize,
        });
    }
    let flat: Vec<f64> = grads.iter().copied().collect();
    opt.adam.update(params.iter_mut(), flat.into_iter());
    Ok(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiPrediction {
    pub value: f64,
    pub normalized: f64,
    /// The de-normalized value fell outside the physical range and was clipped.
    pub clipped: bool,
}

/// De-normalizes `normalized` for `kpi` and clips it to the physical range.
pub fn to_physical(spec: &NormalizationSpec, kpi: Kpi, normalized: f64) -> KpiPrediction {
    let raw = spec.denormalize(kpi, normalized);
    let value = if raw.is_nan() { 0.0 } else { kpi.clip(raw) };
    KpiPrediction {
        value,
        normalized,
        clipped: value != raw,
    }
}

pub fn predict_kpi(params: &GnnParameters, spec: &NormalizationSpec, kpi: Kpi, g: &PlanningSubgraph) -> Result<KpiPrediction> {
    Ok(to_physical(spec, kpi, forward(params, g)?))
}
