//! Spatial index over 4G cells and construction of per-candidate planning subgraphs.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{encode_node, CellInventoryEntry, KpiTable, NormalizationSpec, Technology, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, relative_angles, EdgeGeometry, GeoPoint, EARTH_RADIUS_M};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphBuildConfig {
    /// Number of nearest 4G cells gathered around a candidate.
    pub k: usize,
    /// 4G neighbors farther than this (meters) are not linked to the candidate.
    pub target_radius: f64,
    /// KPI features are the mean over this many trailing days (1 = that day only).
    #[serde(default = "default_window")]
    pub kpi_window_days: u32,
}

fn default_window() -> u32 {
    1
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            k: 50,
            target_radius: 500.0,
            kpi_window_days: 1,
        }
    }
}

impl GraphBuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.target_radius > 0.0 && self.target_radius.is_finite()) {
            return Err(Error::InvalidConfig("target_radius must be positive".into()));
        }
        if self.kpi_window_days == 0 {
            return Err(Error::InvalidConfig("kpi_window_days must be at least 1".into()));
        }
        Ok(())
    }
}

/// A query hit: position in [`SpatialIndex::cells`] and geodesic distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

const BUCKET_SIZE_M: f64 = 250.0;

/// Exact k-NN and radius queries over 4G cells, bucketed on a lat/lon grid.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cells: Vec<CellInventoryEntry>,
    lat_step: f64,
    lon_step: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    /// Smallest cos(latitude) over indexed cells, for longitude lower bounds.
    min_cos_lat: f64,
    /// Grid pruning is unsound across the antimeridian; such inventories are scanned linearly.
    linear_only: bool,
    span: (i64, i64, i64, i64),
}

impl SpatialIndex {
    /// Indexes the 4G cells of `inventory`.
    pub fn build(inventory: &[CellInventoryEntry]) -> Result<Self> {
        let cells: Vec<CellInventoryEntry> = inventory
            .iter()
            .filter(|c| c.technology == Technology::Lte4g)
            .cloned()
            .collect();
        if cells.is_empty() {
            return Err(Error::EmptyInventory);
        }
        let mean_lat = cells.iter().map(|c| c.position.lat()).sum::<f64>() / cells.len() as f64;
        let lat_step = (BUCKET_SIZE_M / EARTH_RADIUS_M).to_degrees();
        let lon_step = lat_step / mean_lat.to_radians().cos().max(0.05);
        let (min_lon, max_lon) = cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c.position.lon()), hi.max(c.position.lon()))
            });
        let min_cos_lat = cells
            .iter()
            .map(|c| c.position.lat().to_radians().cos())
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let mut index = Self {
            cells,
            lat_step,
            lon_step,
            buckets: HashMap::new(),
            min_cos_lat,
            linear_only: max_lon - min_lon > 180.0,
            span: (i64::MAX, i64::MIN, i64::MAX, i64::MIN),
        };
        for i in 0..index.cells.len() {
            let key = index.bucket_of(index.cells[i].position);
            index.span = (
                index.span.0.min(key.0),
                index.span.1.max(key.0),
                index.span.2.min(key.1),
                index.span.3.max(key.1),
            );
            index.buckets.entry(key).or_default().push(i);
        }
        Ok(index)
    }

    pub fn cells(&self) -> &[CellInventoryEntry] {
        &self.cells
    }

    pub fn cell(&self, i: usize) -> &CellInventoryEntry {
        &self.cells[i]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn bucket_of(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lat() / self.lat_step).floor() as i64,
            (p.lon() / self.lon_step).floor() as i64,
        )
    }

    fn order(&self, hits: &mut [Neighbor]) {
        hits.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| self.cells[a.index].cell_id.cmp(&self.cells[b.index].cell_id))
        });
    }

    /// Lower bound on the distance from `p` to any cell outside the square of
    /// buckets within Chebyshev radius `ring` of `center`.
    fn outside_bound(&self, p: GeoPoint, center: (i64, i64), ring: i64) -> f64 {
        let lat_lo = (center.0 - ring) as f64 * self.lat_step;
        let lat_hi = (center.0 + ring + 1) as f64 * self.lat_step;
        let lon_lo = (center.1 - ring) as f64 * self.lon_step;
        let lon_hi = (center.1 + ring + 1) as f64 * self.lon_step;
        let lat_gap = (p.lat() - lat_lo).min(lat_hi - p.lat()).max(0.0);
        let lon_gap = (p.lon() - lon_lo).min(lon_hi - p.lon()).max(0.0);
        let by_lat = EARTH_RADIUS_M * lat_gap.to_radians();
        // haversine h >= cos(lat_p) cos(lat_q) sin²(Δλ/2)
        let s = (p.lat().to_radians().cos() * self.min_cos_lat).sqrt()
            * (lon_gap.to_radians().min(std::f64::consts::PI) * 0.5).sin();
        let by_lon = 2.0 * EARTH_RADIUS_M * s.clamp(0.0, 1.0).asin();
        by_lat.min(by_lon)
    }

    fn ring_exhausts_grid(&self, center: (i64, i64), ring: i64) -> bool {
        center.0 - ring <= self.span.0
            && center.0 + ring >= self.span.1
            && center.1 - ring <= self.span.2
            && center.1 + ring >= self.span.3
    }

    fn visit_ring(&self, p: GeoPoint, center: (i64, i64), ring: i64, out: &mut Vec<Neighbor>) {
        let mut visit = |key: (i64, i64)| {
            if let Some(ids) = self.buckets.get(&key) {
                for &i in ids {
                    out.push(Neighbor {
                        index: i,
                        distance: geodesic_distance(p, self.cells[i].position),
                    });
                }
            }
        };
        if ring == 0 {
            visit(center);
            return;
        }
        for dj in -ring..=ring {
            visit((center.0 - ring, center.1 + dj));
            visit((center.0 + ring, center.1 + dj));
        }
        for di in -ring + 1..ring {
            visit((center.0 + di, center.1 - ring));
            visit((center.0 + di, center.1 + ring));
        }
    }

    fn scan_all(&self, p: GeoPoint) -> Vec<Neighbor> {
        (0..self.cells.len())
            .map(|i| Neighbor {
                index: i,
                distance: geodesic_distance(p, self.cells[i].position),
            })
            .collect()
    }

    /// The `k` nearest cells, ascending by distance, ties by `cell_id`.
    pub fn nearest(&self, p: GeoPoint, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.cells.len());
        if k == 0 {
            return Vec::new();
        }
        let mut hits = if self.linear_only {
            self.scan_all(p)
        } else {
            let center = self.bucket_of(p);
            let mut hits = Vec::new();
            let mut ring = 0;
            loop {
                self.visit_ring(p, center, ring, &mut hits);
                if self.ring_exhausts_grid(center, ring) {
                    break;
                }
                if hits.len() >= k {
                    let kth = select_kth(&mut hits, k);
                    if kth < self.outside_bound(p, center, ring) {
                        break;
                    }
                }
                ring += 1;
            }
            hits
        };
        self.order(&mut hits);
        hits.truncate(k);
        hits
    }

    /// All cells within `radius` meters (inclusive), ascending by distance.
    pub fn within(&self, p: GeoPoint, radius: f64) -> Vec<Neighbor> {
        let mut hits = if self.linear_only {
            self.scan_all(p)
        } else {
            let center = self.bucket_of(p);
            let mut hits = Vec::new();
            let mut ring = 0;
            loop {
                self.visit_ring(p, center, ring, &mut hits);
                if self.ring_exhausts_grid(center, ring) || self.outside_bound(p, center, ring) > radius {
                    break;
                }
                ring += 1;
            }
            hits
        };
        hits.retain(|n| n.distance <= radius);
        self.order(&mut hits);
        hits
    }
}

/// k-th smallest distance (1-based) among `hits`; reorders `hits`.
fn select_kth(hits: &mut [Neighbor], k: usize) -> f64 {
    hits.select_nth_unstable_by(k - 1, |a, b| a.distance.total_cmp(&b.distance));
    hits[k - 1].distance
}

/// Convenience wrapper over [`SpatialIndex::build`].
pub fn build_index(inventory: &[CellInventoryEntry]) -> Result<SpatialIndex> {
    SpatialIndex::build(inventory)
}

/// Ordered cells nearest to `p`.
pub fn nearest_neighbors(index: &SpatialIndex, p: GeoPoint, k: usize) -> Vec<Neighbor> {
    index.nearest(p, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub cell_id: Arc<str>,
    pub features: Vec<f64>,
    /// Geometry from the target toward this node (zero-distance, masked for the target itself).
    pub target_geometry: EdgeGeometry,
    /// Whether edges to and from the target exist.
    pub linked_to_target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub geometry: EdgeGeometry,
}

/// The unit of prediction: node 0 is the 5G candidate, nodes `1..` its 4G neighbors
/// in ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningSubgraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Arc<[GraphEdge]>,
    pub low_confidence: bool,
}

impl PlanningSubgraph {
    pub const TARGET: usize = 0;

    pub fn target(&self) -> &GraphNode {
        &self.nodes[Self::TARGET]
    }

    pub fn neighbors(&self) -> &[GraphNode] {
        &self.nodes[1..]
    }

    pub fn node_dim(&self) -> usize {
        self.nodes[0].features.len()
    }

    /// Structural checks: at least one target edge, edge endpoints in range, paired directions.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let dim = self.node_dim();
        if let Some(bad) = self.nodes.iter().find(|v| v.features.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.features.len(),
                context: "node features",
            });
        }
        if self.edges.iter().any(|e| e.src >= n || e.dst >= n || e.src == e.dst) {
            return Err(Error::InvalidConfig("edge endpoint out of range".into()));
        }
        if !self.edges.iter().any(|e| e.dst == Self::TARGET) {
            return Err(Error::InvalidConfig("target has no incident edge".into()));
        }
        Ok(())
    }
}

/// Date-independent part of a subgraph: which cells, which edges, what geometry.
#[derive(Debug, Clone)]
pub struct SubgraphTemplate {
    candidate: CellInventoryEntry,
    neighbors: Vec<usize>,
    target_geometry: Vec<EdgeGeometry>,
    linked: Vec<bool>,
    cell_ids: Vec<Arc<str>>,
    edges: Arc<[GraphEdge]>,
    low_confidence: bool,
}

impl SubgraphTemplate {
    pub fn build(index: &SpatialIndex, candidate: &CellInventoryEntry, cfg: &GraphBuildConfig) -> Result<Self> {
        cfg.validate()?;
        let hits = index.nearest(candidate.position, cfg.k);
        if hits.is_empty() {
            return Err(Error::NoFourGCells);
        }
        let target_geometry: Vec<EdgeGeometry> = hits
            .iter()
            .map(|h| {
                let c = index.cell(h.index);
                relative_angles(candidate.position, candidate.azimuth, c.position, c.azimuth)
            })
            .collect();
        let mut linked: Vec<bool> = target_geometry.iter().map(|g| g.d <= cfg.target_radius).collect();
        let low_confidence = !linked.iter().any(|&l| l);
        if low_confidence {
            linked[0] = true;
        }

        let n = hits.len();
        let mut edges = Vec::with_capacity(2 * n + n * n.saturating_sub(1));
        for (i, g) in target_geometry.iter().enumerate() {
            if linked[i] {
                edges.push(GraphEdge {
                    src: i + 1,
                    dst: PlanningSubgraph::TARGET,
                    geometry: g.reversed(),
                });
                edges.push(GraphEdge {
                    src: PlanningSubgraph::TARGET,
                    dst: i + 1,
                    geometry: *g,
                });
            }
        }
        for i in 0..n {
            let a = index.cell(hits[i].index);
            for j in i + 1..n {
                let b = index.cell(hits[j].index);
                let g = relative_angles(a.position, a.azimuth, b.position, b.azimuth);
                edges.push(GraphEdge {
                    src: i + 1,
                    dst: j + 1,
                    geometry: g,
                });
                edges.push(GraphEdge {
                    src: j + 1,
                    dst: i + 1,
                    geometry: g.reversed(),
                });
            }
        }

        let mut cell_ids: Vec<Arc<str>> = Vec::with_capacity(n + 1);
        cell_ids.push(Arc::from(candidate.cell_id.as_str()));
        cell_ids.extend(hits.iter().map(|h| Arc::from(index.cell(h.index).cell_id.as_str())));
        Ok(Self {
            candidate: candidate.clone(),
            neighbors: hits.iter().map(|h| h.index).collect(),
            target_geometry,
            linked,
            cell_ids,
            edges: edges.into(),
            low_confidence,
        })
    }

    pub fn low_confidence(&self) -> bool {
        self.low_confidence
    }

    pub fn candidate(&self) -> &CellInventoryEntry {
        &self.candidate
    }

    /// `(inventory index, geometry relative to the candidate, linked)` in distance order.
    pub fn neighbors(&self) -> impl Iterator<Item = (usize, EdgeGeometry, bool)> + '_ {
        self.neighbors
            .iter()
            .zip(&self.target_geometry)
            .zip(&self.linked)
            .map(|((&i, &g), &l)| (i, g, l))
    }

    /// Attaches node features for `date`.
    pub fn instantiate(
        &self,
        index: &SpatialIndex,
        date: NaiveDate,
        kpis: &KpiTable,
        spec: &NormalizationSpec,
        vocab: &Vocabulary,
        cfg: &GraphBuildConfig,
    ) -> PlanningSubgraph {
        let mut nodes = Vec::with_capacity(self.neighbors.len() + 1);
        nodes.push(GraphNode {
            cell_id: self.cell_ids[0].clone(),
            features: encode_node(&self.candidate, None, spec, vocab),
            target_geometry: EdgeGeometry {
                d: 0.0,
                alpha: 0.0,
                theta: 0.0,
                rho: 0.0,
                angles_valid: false,
            },
            linked_to_target: false,
        });
        for (slot, &i) in self.neighbors.iter().enumerate() {
            let cell = index.cell(i);
            let record = kpis.trailing_mean(&cell.cell_id, date, cfg.kpi_window_days);
            nodes.push(GraphNode {
                cell_id: self.cell_ids[slot + 1].clone(),
                features: encode_node(cell, record.as_ref(), spec, vocab),
                target_geometry: self.target_geometry[slot],
                linked_to_target: self.linked[slot],
            });
        }
        PlanningSubgraph {
            nodes,
            edges: self.edges.clone(),
            low_confidence: self.low_confidence,
        }
    }
}

/// k nearest 4G cells around the candidate, fully connected among themselves and
/// linked to the candidate when within `target_radius`. With nothing in range the
/// single nearest cell is linked and the subgraph is flagged low-confidence.
pub fn build_subgraph(
    index: &SpatialIndex,
    candidate: &CellInventoryEntry,
    date: NaiveDate,
    kpis: &KpiTable,
    spec: &NormalizationSpec,
    vocab: &Vocabulary,
    cfg: &GraphBuildConfig,
) -> Result<PlanningSubgraph> {
    Ok(SubgraphTemplate::build(index, candidate, cfg)?.instantiate(index, date, kpis, spec, vocab, cfg))
}
