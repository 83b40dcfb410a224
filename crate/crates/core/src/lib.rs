//! What-if KPI prediction for candidate 5G cells.
//!
//! Existing 4G cells around a candidate site are turned into a small graph whose
//! nodes carry daily KPIs and whose edges carry relative geometry (distance and
//! three orientation angles). A message-passing network reads that graph and
//! predicts PRB utilization and user throughput at the candidate. A zero-padded
//! linear regression over the same graphs serves as the baseline.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod mlr;
pub mod numeric;
pub mod planner;
pub mod synth;

pub use error::{Error, Result};
