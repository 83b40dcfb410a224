//! Self-contained model files: parameters plus everything needed to rebuild inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Kpi, NormalizationSpec, Vocabulary};
use crate::error::{Error, Result};
use crate::gnn::{self, to_physical, GnnParameters, KpiPrediction};
use crate::graph::{GraphBuildConfig, PlanningSubgraph};
use crate::mlr::{self, MlrParameters};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gnn,
    Mlr,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gnn => "gnn",
            ModelKind::Mlr => "mlr",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gnn" => Ok(ModelKind::Gnn),
            "mlr" => Ok(ModelKind::Mlr),
            other => Err(format!("unknown model {other:?} (expected gnn or mlr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Gnn(GnnParameters),
    Mlr(MlrParameters),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kpi: Kpi,
    pub graph: GraphBuildConfig,
    pub normalization: NormalizationSpec,
    pub vocabulary: Vocabulary,
    pub model: ModelParams,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self.model {
            ModelParams::Gnn(_) => ModelKind::Gnn,
            ModelParams::Mlr(_) => ModelKind::Mlr,
        }
    }

    /// Short identifier such as `gnn-dl_throughput-v1`.
    pub fn model_version(&self) -> String {
        format!("{}-{}-v{}", self.kind().name(), self.kpi.name(), self.version)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.graph.validate()?;
        self.normalization.validate()?;
        let node_dim = self.vocabulary.node_dim();
        let got = match &self.model {
            ModelParams::Gnn(p) => {
                p.validate()?;
                p.node_dim
            }
            ModelParams::Mlr(p) => {
                p.validate()?;
                if p.layout.k != self.graph.k {
                    return Err(Error::Checkpoint("mlr slot count differs from graph k".into()));
                }
                p.layout.node_dim
            }
        };
        if got != node_dim {
            return Err(Error::DimensionMismatch {
                expected: node_dim,
                got,
                context: "checkpoint node_dim",
            });
        }
        Ok(())
    }

    /// Normalized model output.
    pub fn predict_normalized(&self, g: &PlanningSubgraph) -> Result<f64> {
        match &self.model {
            ModelParams::Gnn(p) => gnn::forward(p, g),
            ModelParams::Mlr(p) => mlr::predict_graph(p, g),
        }
    }

    pub fn predict(&self, g: &PlanningSubgraph) -> Result<KpiPrediction> {
        Ok(to_physical(&self.normalization, self.kpi, self.predict_normalized(g)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.validate()?;
        Ok(ck)
    }
}
