//! Multiple linear regression over zero-padded, concatenated neighbor slots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EDGE_FEATURE_DIM;
use crate::graph::PlanningSubgraph;

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-6;

/// How subgraphs are flattened into a fixed-length vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlrLayout {
    /// Number of neighbor slots.
    pub k: usize,
    pub node_dim: usize,
    /// Append the target-edge geometry to every slot. When false only node
    /// features are used.
    pub include_geometry: bool,
    pub distance_scale: f64,
}

impl MlrLayout {
    pub fn slot_dim(&self) -> usize {
        self.node_dim + if self.include_geometry { EDGE_FEATURE_DIM } else { 0 }
    }

    pub fn dim(&self) -> usize {
        self.k * self.slot_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrParameters {
    pub layout: MlrLayout,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub ridge_lambda: f64,
}

impl MlrParameters {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim(),
                got: self.weights.len(),
                context: "mlr weights",
            });
        }
        if !(self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())) {
            return Err(Error::Checkpoint("non-finite mlr parameter".into()));
        }
        Ok(())
    }
}

/// Flattens the neighbors of `g` in ascending distance to the target (ties by
/// cell id). Slots past the neighbor count stay zero; neighbors past `k` are dropped.
pub fn assemble_vector(g: &PlanningSubgraph, layout: &MlrLayout) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (1..g.nodes.len()).collect();
    order.sort_by(|&a, &b| {
        let (na, nb) = (&g.nodes[a], &g.nodes[b]);
        na.target_geometry
            .d
            .total_cmp(&nb.target_geometry.d)
            .then_with(|| na.cell_id.cmp(&nb.cell_id))
    });
    let slot = layout.slot_dim();
    let mut x = vec![0.0; layout.dim()];
    for (s, &i) in order.iter().take(layout.k).enumerate() {
        let node = &g.nodes[i];
        if node.features.len() != layout.node_dim {
            return Err(Error::DimensionMismatch {
                expected: layout.node_dim,
                got: node.features.len(),
                context: "node features",
            });
        }
        let out = &mut x[s * slot..(s + 1) * slot];
        out[..layout.node_dim].copy_from_slice(&node.features);
        if layout.include_geometry && node.linked_to_target {
            out[layout.node_dim..].copy_from_slice(&node.target_geometry.features(layout.distance_scale));
        }
    }
    Ok(x)
}

/// Ridge regression with an unpenalized intercept.
///
/// Solves `(X̃ᵀX̃ + λI) w = X̃ᵀỹ` on centered data and recovers `b = ȳ − wᵀx̄`.
pub fn fit(samples: &[(Vec<f64>, f64)], ridge_lambda: f64, layout: MlrLayout) -> Result<MlrParameters> {
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidConfig("ridge_lambda must be finite and non-negative".into()));
    }
    let n = samples.len();
    let d = layout.dim();
    for (x, _) in samples {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
                context: "mlr sample",
            });
        }
    }
    let mut mean_x = vec![0.0; d];
    let mut mean_y = 0.0;
    for (x, y) in samples {
        for (m, v) in mean_x.iter_mut().zip(x) {
            *m += v;
        }
        mean_y += y;
    }
    for m in &mut mean_x {
        *m /= n as f64;
    }
    mean_y /= n as f64;

    let xc = DMatrix::from_fn(n, d, |i, j| samples[i].0[j] - mean_x[j]);
    let yc = DVector::from_iterator(n, samples.iter().map(|(_, y)| y - mean_y));
    let mut a = xc.tr_mul(&xc);
    for i in 0..d {
        a[(i, i)] += ridge_lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let chol = a.clone().cholesky().ok_or(Error::SingularSystem)?;
    if ridge_lambda == 0.0 {
        // rounding can let a rank-deficient system factor; reject tiny pivots
        let scale = (0..d).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let l = chol.l_dirty();
        if (0..d).any(|i| l[(i, i)] * l[(i, i)] <= scale * d as f64 * f64::EPSILON) {
            return Err(Error::SingularSystem);
        }
    }
    let mut w = chol.solve(&rhs);
    // one step of iterative refinement
    let r = &rhs - &a * &w;
    w += chol.solve(&r);
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let bias = mean_y - w.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
    Ok(MlrParameters {
        layout,
        weights: w.iter().copied().collect(),
        bias,
        ridge_lambda,
    })
}

/// Normalized prediction `wᵀx + b`.
pub fn predict(params: &MlrParameters, x: &[f64]) -> Result<f64> {
    if x.len() != params.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: params.weights.len(),
            got: x.len(),
            context: "mlr input",
        });
    }
    Ok(params.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.bias)
}

pub fn predict_graph(params: &MlrParameters, g: &PlanningSubgraph) -> Result<f64> {
    predict(params, &assemble_vector(g, &params.layout)?)
}

/// `Xᵀ(Xw + b − y) + λw`, the gradient of the ridge objective halved.
pub fn optimality_residual(params: &MlrParameters, samples: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut g: Vec<f64> = params.weights.iter().map(|w| params.ridge_lambda * w).collect();
    for (x, y) in samples {
        let r = predict(params, x).expect("sample dimension") - y;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += xi * r;
        }
    }
    g
}
