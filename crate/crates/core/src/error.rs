use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {value}")]
    InvalidCoordinate { field: &'static str, value: f64 },

    #[error("sites are co-located ({distance_m:.3} m apart); bearing undefined")]
    CoLocatedSites { distance_m: f64 },

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate cell_id {0}")]
    DuplicateCellId(String),

    #[error("site {site_id} has inconsistent positions ({distance_m:.2} m apart)")]
    InconsistentSitePosition { site_id: String, distance_m: f64 },

    #[error("duplicate KPI record for cell {cell_id} on {date}")]
    DuplicateRecord { cell_id: String, date: chrono::NaiveDate },

    #[error("no KPI records on the training dates")]
    EmptyTrainingSet,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid {field}: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("inventory contains no 4G cells")]
    EmptyInventory,

    #[error("no 4G cells available to build a subgraph")]
    NoFourGCells,

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("normal equations are singular")]
    SingularSystem,

    #[error("label {truth} is below the APE floor")]
    LabelBelowFloor { truth: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Input-validation failures, as opposed to runtime faults.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidCoordinate { .. }
                | Error::Parse { .. }
                | Error::DuplicateCellId(_)
                | Error::InconsistentSitePosition { .. }
                | Error::DuplicateRecord { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidField { .. }
                | Error::Checkpoint(_)
        )
    }
}
