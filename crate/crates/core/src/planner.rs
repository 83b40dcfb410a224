//! What-if prediction for a single hypothetical 5G cell.

use std::collections::BTreeSet;
use std::hash::Hasher;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{CellInventoryEntry, Kpi, KpiTable, Technology};
use crate::error::{Error, Result};
use crate::geometry::{Azimuth, GeoPoint};
use crate::graph::{SpatialIndex, SubgraphTemplate};
use crate::synth::BoundingBox;

/// Cell id given to the hypothetical cell inside its subgraph.
pub const CANDIDATE_ID: &str = "candidate";

/// Upper bound on cells returned by one bounding-box query.
pub const MAX_CELLS_PER_QUERY: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub azimuth_deg: Option<f64>,
    #[serde(default)]
    pub is_omni: bool,
    pub manufacturer: String,
    pub antenna_model: String,
    /// KPI day used for neighbor features; the latest available when absent.
    #[serde(default)]
    pub date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSummary {
    pub cell_id: String,
    pub d: f64,
    pub alpha: f64,
    pub theta: f64,
    pub rho: f64,
    pub linked_to_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub prb_util_pct: f64,
    pub ul_thr_mbps: f64,
    pub dl_thr_mbps: f64,
    pub low_confidence: bool,
    /// Predictions that had to be clipped into the physical range.
    pub clipped: Vec<Kpi>,
    pub neighbors: Vec<NeighborSummary>,
    pub model_version: String,
}

/// One field-level validation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Cell descriptor for map rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: String,
    pub lat: f64,
    pub lon: f64,
    pub azimuth_deg: Option<f64>,
    pub technology: Technology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellsResponse {
    pub cells: Vec<CellSummary>,
    pub truncated: bool,
}

impl WhatIfRequest {
    /// Every problem with the request, in field order.
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            push("lat", format!("latitude must be within [-90, 90], got {}", self.lat));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            push("lon", format!("longitude must be within [-180, 180], got {}", self.lon));
        }
        match (self.is_omni, self.azimuth_deg) {
            (false, None) => push("azimuth_deg", "required unless is_omni is true".into()),
            (_, Some(a)) if !a.is_finite() => push("azimuth_deg", "must be a finite number of degrees".into()),
            _ => {}
        }
        if self.manufacturer.trim().is_empty() {
            push("manufacturer", "must not be empty".into());
        }
        if self.antenna_model.trim().is_empty() {
            push("antenna_model", "must not be empty".into());
        }
        out
    }

    pub fn to_cell(&self) -> Result<CellInventoryEntry> {
        if let Some(e) = self.field_errors().into_iter().next() {
            return Err(Error::InvalidField {
                field: e.field,
                reason: e.message,
            });
        }
        Ok(CellInventoryEntry {
            cell_id: CANDIDATE_ID.into(),
            site_id: CANDIDATE_ID.into(),
            position: GeoPoint::new(self.lat, self.lon)?,
            azimuth: if self.is_omni {
                Azimuth::omni()
            } else {
                Azimuth::degrees(self.azimuth_deg.expect("validated"))
            },
            technology: Technology::Nr5g,
            manufacturer: self.manufacturer.clone(),
            antenna_model: self.antenna_model.clone(),
        })
    }
}

/// Immutable snapshot of data and the three per-KPI models.
#[derive(Debug)]
pub struct Planner {
    index: SpatialIndex,
    inventory: Vec<CellInventoryEntry>,
    kpis: KpiTable,
    dates: BTreeSet<NaiveDate>,
    models: Vec<Checkpoint>,
    model_version: String,
}

/// 64-bit FNV-1a, stable across platforms and releases.
struct Fnv(u64);

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }
}

impl Planner {
    /// `models` must hold exactly one checkpoint per KPI.
    pub fn new(inventory: Vec<CellInventoryEntry>, kpis: KpiTable, models: Vec<Checkpoint>) -> Result<Self> {
        let mut ordered = Vec::with_capacity(3);
        for kpi in Kpi::ALL {
            let mut matching = models.iter().filter(|m| m.kpi == kpi);
            let m = matching
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("no checkpoint for {}", kpi.name())))?;
            if matching.next().is_some() {
                return Err(Error::Checkpoint(format!("more than one checkpoint for {}", kpi.name())));
            }
            m.validate()?;
            ordered.push(m.clone());
        }
        let index = SpatialIndex::build(&inventory)?;
        let dates = kpis.dates();
        if dates.is_empty() {
            return Err(Error::InvalidConfig("KPI table is empty".into()));
        }
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        for m in &ordered {
            h.write(m.to_json()?.as_bytes());
        }
        let kinds: BTreeSet<&str> = ordered.iter().map(|m| m.kind().name()).collect();
        let kinds: Vec<&str> = kinds.into_iter().collect();
        let model_version = format!("{}-v{}-{:016x}", kinds.join("+"), ordered[0].version, h.finish());
        Ok(Self {
            index,
            inventory,
            kpis,
            dates,
            models: ordered,
            model_version,
        })
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn latest_date(&self) -> NaiveDate {
        *self.dates.iter().next_back().expect("non-empty")
    }

    pub fn inventory(&self) -> &[CellInventoryEntry] {
        &self.inventory
    }

    pub fn predict(&self, req: &WhatIfRequest) -> Result<WhatIfResponse> {
        let candidate = req.to_cell()?;
        let date = match req.date {
            Some(d) if !self.dates.contains(&d) => {
                return Err(Error::InvalidField {
                    field: "date".into(),
                    reason: format!("no KPI data for {d}"),
                })
            }
            Some(d) => d,
            None => self.latest_date(),
        };
        let mut values = [0.0; 3];
        let mut clipped = Vec::new();
        let mut template: Option<SubgraphTemplate> = None;
        let mut low_confidence = false;
        for (i, m) in self.models.iter().enumerate() {
            let t = match &template {
                Some(t) if self.models[0].graph == m.graph => t.clone(),
                _ => SubgraphTemplate::build(&self.index, &candidate, &m.graph)?,
            };
            let g = t.instantiate(&self.index, date, &self.kpis, &m.normalization, &m.vocabulary, &m.graph);
            let p = m.predict(&g)?;
            values[i] = p.value;
            if p.clipped {
                clipped.push(m.kpi);
            }
            if i == 0 {
                low_confidence = g.low_confidence;
                template = Some(t);
            }
        }
        let template = template.expect("three models");
        let mut neighbors: Vec<NeighborSummary> = template
            .neighbors()
            .map(|(i, geom, linked)| NeighborSummary {
                cell_id: self.index.cell(i).cell_id.clone(),
                d: geom.d,
                alpha: geom.alpha,
                theta: geom.theta,
                rho: geom.rho,
                linked_to_target: linked,
            })
            .collect();
        neighbors.sort_by(|a, b| a.d.total_cmp(&b.d).then_with(|| a.cell_id.cmp(&b.cell_id)));
        Ok(WhatIfResponse {
            prb_util_pct: values[Kpi::PrbUtil.index()],
            ul_thr_mbps: values[Kpi::UlThroughput.index()],
            dl_thr_mbps: values[Kpi::DlThroughput.index()],
            low_confidence,
            clipped,
            neighbors,
            model_version: self.model_version.clone(),
        })
    }

    /// Inventory cells inside `bbox`, sorted by id, at most [`MAX_CELLS_PER_QUERY`].
    pub fn cells_in(&self, bbox: &BoundingBox) -> Result<CellsResponse> {
        bbox.validate()?;
        let mut cells: Vec<CellSummary> = self
            .inventory
            .iter()
            .filter(|c| bbox.contains(c.position))
            .map(|c| CellSummary {
                cell_id: c.cell_id.clone(),
                lat: c.position.lat(),
                lon: c.position.lon(),
                azimuth_deg: c.azimuth.bearing(),
                technology: c.technology,
            })
            .collect();
        cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
        let truncated = cells.len() > MAX_CELLS_PER_QUERY;
        cells.truncate(MAX_CELLS_PER_QUERY);
        Ok(CellsResponse { cells, truncated })
    }
}

/// Parses `minlat,minlon,maxlat,maxlon`.
pub fn parse_bbox(text: &str) -> Result<BoundingBox> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::InvalidField {
            field: "bbox".into(),
            reason: "expected minlat,minlon,maxlat,maxlon".into(),
        });
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::InvalidField {
            field: "bbox".into(),
            reason: format!("{p:?} is not a number"),
        })?;
    }
    let bbox = BoundingBox {
        min_lat: v[0],
        min_lon: v[1],
        max_lat: v[2],
        max_lon: v[3],
    };
    bbox.validate().map_err(|e| Error::InvalidField {
        field: "bbox".into(),
        reason: e.to_string(),
    })?;
    Ok(bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::ModelKind;
    use crate::graph::GraphBuildConfig;
    use crate::harness::{run_training, scenario_region, ExperimentConfig, ModelConfig};
    use crate::synth::ScenarioConfig;

    fn planner() -> Planner {
        let cfg = ExperimentConfig {
            scenario: ScenarioConfig {
                n_sites: 30,
                share_5g_sites: 0.3,
                end_date: NaiveDate::from_ymd_opt(2022, 11, 3).unwrap(),
                ..Default::default()
            },
            model: ModelConfig {
                kind: ModelKind::Mlr,
                graph: GraphBuildConfig {
                    k: 6,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        };
        let (_, region) = scenario_region(&cfg.scenario).unwrap();
        let models = Kpi::ALL
            .iter()
            .map(|&k| run_training(&region, &cfg, k).unwrap().checkpoint)
            .collect();
        Planner::new(region.inventory, region.kpis, models).unwrap()
    }

    fn request(p: &Planner) -> WhatIfRequest {
        let c = &p.inventory()[0];
        WhatIfRequest {
            lat: c.position.lat() + 0.0003,
            lon: c.position.lon() - 0.0002,
            azimuth_deg: Some(120.0),
            is_omni: false,
            manufacturer: c.manufacturer.clone(),
            antenna_model: c.antenna_model.clone(),
            date: None,
        }
    }

    #[test]
    fn field_errors_name_the_field() {
        let p = planner();
        let mut r = request(&p);
        r.lat = 95.0;
        r.azimuth_deg = None;
        let fields: Vec<String> = r.field_errors().into_iter().map(|e| e.field).collect();
        assert_eq!(fields, ["lat", "azimuth_deg"]);
        assert!(matches!(p.predict(&r), Err(Error::InvalidField { field, .. }) if field == "lat"));

        let mut omni = request(&p);
        omni.is_omni = true;
        omni.azimuth_deg = None;
        assert!(omni.field_errors().is_empty());

        let mut late = request(&p);
        late.date = NaiveDate::from_ymd_opt(2030, 1, 1);
        assert!(matches!(p.predict(&late), Err(Error::InvalidField { field, .. }) if field == "date"));
    }

    #[test]
    fn prediction_is_deterministic_and_complete() {
        let p = planner();
        let r = request(&p);
        let a = p.predict(&r).unwrap();
        let b = p.predict(&r).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.neighbors.len(), 6);
        assert!(a.neighbors.windows(2).all(|w| w[0].d <= w[1].d));
        assert!((0.0..=100.0).contains(&a.prb_util_pct));
        assert!(a.ul_thr_mbps >= 0.0 && a.dl_thr_mbps >= 0.0);
        assert_eq!(a.model_version, p.model_version());
        assert!(p.model_version().starts_with("mlr-v1-"));

        // an explicit latest date is the same as the default
        let mut dated = r.clone();
        dated.date = Some(p.latest_date());
        assert_eq!(p.predict(&dated).unwrap(), a);
    }

    #[test]
    fn far_candidate_is_low_confidence() {
        let p = planner();
        let mut r = request(&p);
        r.lat += 0.2;
        let out = p.predict(&r).unwrap();
        assert!(out.low_confidence);
        assert_eq!(out.neighbors.iter().filter(|n| n.linked_to_target).count(), 1);
    }

    #[test]
    fn bbox_parsing() {
        let b = parse_bbox("51.5, -0.1,51.52,-0.08").unwrap();
        assert_eq!((b.min_lat, b.max_lon), (51.5, -0.08));
        for bad in ["", "1,2,3", "a,b,c,d", "51.52,-0.1,51.5,-0.08", "91,0,92,1", "0,0,1,NaN"] {
            assert!(matches!(parse_bbox(bad), Err(Error::InvalidField { field, .. }) if field == "bbox"), "{bad}");
        }
    }

    #[test]
    fn cells_in_box_are_sorted_and_inside() {
        let p = planner();
        let all = p.inventory();
        let lat: Vec<f64> = all.iter().map(|c| c.position.lat()).collect();
        let lon: Vec<f64> = all.iter().map(|c| c.position.lon()).collect();
        let fold = |v: &[f64], f: fn(f64, f64) -> f64, init| v.iter().copied().fold(init, f);
        let whole = BoundingBox {
            min_lat: fold(&lat, f64::min, f64::INFINITY) - 1e-6,
            min_lon: fold(&lon, f64::min, f64::INFINITY) - 1e-6,
            max_lat: fold(&lat, f64::max, f64::NEG_INFINITY) + 1e-6,
            max_lon: fold(&lon, f64::max, f64::NEG_INFINITY) + 1e-6,
        };
        let r = p.cells_in(&whole).unwrap();
        assert_eq!(r.cells.len(), all.len());
        assert!(!r.truncated);
        assert!(r.cells.windows(2).all(|w| w[0].cell_id < w[1].cell_id));

        let half = BoundingBox {
            max_lat: (whole.min_lat + whole.max_lat) / 2.0,
            ..whole
        };
        let r = p.cells_in(&half).unwrap();
        assert!(r.cells.iter().all(|c| c.lat <= half.max_lat));
        assert_eq!(r.cells.len(), lat.iter().filter(|&&l| l <= half.max_lat).count());
    }
}
