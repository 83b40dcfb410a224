//! Seeded synthetic cities: sectored 4G sites, co-located 5G cells and a planted
//! KPI field.
//!
//! # Ground truth
//!
//! Demand is a smooth field over the region, `D(p) = base + Σ A_j exp(-|p - c_j|² / 2σ_j²)`,
//! built from seeded Gaussian bumps. A cell sees the mean of `D` sampled along its
//! boresight at [`BORESIGHT_SAMPLES_M`] (omni cells average six directions). With
//! `λ` that local demand, `w` the day factor (1 on weekdays, [`WEEKEND_FACTOR`] on
//! weekends), `g` the antenna-model gain, `s` the region scale and technology
//! constants `P, U, C`:
//!
//! ```text
//! L   = λ · w
//! prb = s · P · L / sqrt(g)
//! ul  = s · U · g / (1 + L / 2)
//! dl  = s · C · g / (1 + L)
//! ```
//!
//! Each value is multiplied by `exp(σ_kpi · N(0, 1))` and clipped to its physical
//! range. The noiseless value is exposed through [`GroundTruthField::base_kpis`], so
//! the irreducible error of any predictor can be measured against it
//! ([`noise_floor`]). Nothing depends on absolute coordinates except through the
//! demand field, so the relative geometry of cells is what carries information.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_inventory, write_kpis, CellInventoryEntry, Kpi, KpiRecord, KpiTable, Technology};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, initial_bearing, Azimuth, GeoPoint};

pub const BORESIGHT_SAMPLES_M: [f64; 3] = [30.0, 80.0, 150.0];
pub const WEEKEND_FACTOR: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        GeoPoint::new(self.min_lat, self.min_lon)?;
        GeoPoint::new(self.max_lat, self.max_lon)?;
        if !(self.min_lat < self.max_lat && self.min_lon < self.max_lon) {
            return Err(Error::InvalidConfig("bbox corners must be (min, max)".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat()) && (self.min_lon..=self.max_lon).contains(&p.lon())
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            0.5 * (self.min_lat + self.max_lat),
            0.5 * (self.min_lon + self.max_lon),
        )
        .expect("validated bbox")
    }

    /// Approximate `(north-south, east-west)` extent in meters.
    pub fn extent_m(&self) -> (f64, f64) {
        let c = self.center();
        let ns = geodesic_distance(
            GeoPoint::new(self.min_lat, c.lon()).expect("validated bbox"),
            GeoPoint::new(self.max_lat, c.lon()).expect("validated bbox"),
        );
        let ew = geodesic_distance(
            GeoPoint::new(c.lat(), self.min_lon).expect("validated bbox"),
            GeoPoint::new(c.lat(), self.max_lon).expect("validated bbox"),
        );
        (ns, ew)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteLayout {
    /// Sectors per 4G site, evenly spread from 0°.
    pub sectors: usize,
    pub azimuth_jitter_deg: f64,
    /// Fraction of sites carrying a single omnidirectional cell instead of sectors.
    pub omni_share: f64,
    /// Std-dev of the 5G boresight around the co-located 4G sector.
    pub nr_azimuth_jitter_deg: f64,
    pub min_site_separation_m: f64,
}

impl Default for SiteLayout {
    fn default() -> Self {
        Self {
            sectors: 3,
            azimuth_jitter_deg: 15.0,
            omni_share: 0.02,
            nr_azimuth_jitter_deg: 3.0,
            min_site_separation_m: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiNoise {
    pub prb_util: f64,
    pub ul_throughput: f64,
    pub dl_throughput: f64,
}

impl KpiNoise {
    pub fn get(&self, kpi: Kpi) -> f64 {
        match kpi {
            Kpi::PrbUtil => self.prb_util,
            Kpi::UlThroughput => self.ul_throughput,
            Kpi::DlThroughput => self.dl_throughput,
        }
    }

    pub fn uniform(std: f64) -> Self {
        Self {
            prb_util: std,
            ul_throughput: std,
            dl_throughput: std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub name: String,
    pub region_bbox: BoundingBox,
    pub n_sites: usize,
    #[serde(default)]
    pub layout: SiteLayout,
    pub share_5g_sites: f64,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// Log-space std-dev of the multiplicative KPI noise.
    pub noise_std: KpiNoise,
    #[serde(default = "one")]
    pub region_kpi_scale: f64,
    /// Demand bumps per square kilometre.
    #[serde(default = "default_bump_density")]
    pub bump_density_per_km2: f64,
}

fn one() -> f64 {
    1.0
}

fn default_bump_density() -> f64 {
    1.5
}

impl Default for ScenarioConfig {
    /// A dense, City-of-London-sized region: ~1 000 4G cells, ~150 5G cells,
    /// October through December 2022.
    fn default() -> Self {
        Self {
            seed: 20221001,
            name: "region-a".into(),
            region_bbox: BoundingBox {
                min_lat: 51.505,
                min_lon: -0.115,
                max_lat: 51.525,
                max_lon: -0.070,
            },
            n_sites: 334,
            layout: SiteLayout::default(),
            share_5g_sites: 0.15,
            start_date: NaiveDate::from_ymd_opt(2022, 10, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2022, 12, 31).expect("valid date"),
            noise_std: KpiNoise::uniform(0.05),
            region_kpi_scale: 1.0,
            bump_density_per_km2: default_bump_density(),
        }
    }
}

impl ScenarioConfig {
    /// A disjoint region ~200 km north with its own layout seed.
    pub fn shifted_region(&self, seed: u64, region_kpi_scale: f64) -> Self {
        Self {
            seed,
            name: "region-b".into(),
            region_bbox: BoundingBox {
                min_lat: 52.945,
                min_lon: -1.170,
                max_lat: 52.965,
                max_lon: -1.125,
            },
            region_kpi_scale,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region_bbox.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_sites == 0 {
            return bad("n_sites must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.share_5g_sites) {
            return bad("share_5g_sites must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.layout.omni_share) {
            return bad("omni_share must be in [0, 1]");
        }
        if self.layout.sectors == 0 {
            return bad("sectors must be at least 1");
        }
        if self.end_date < self.start_date {
            return bad("end_date precedes start_date");
        }
        if Kpi::ALL.iter().any(|&k| !(self.noise_std.get(k) >= 0.0)) {
            return bad("noise_std must be non-negative");
        }
        if !(self.region_kpi_scale > 0.0 && self.region_kpi_scale.is_finite()) {
            return bad("region_kpi_scale must be positive");
        }
        Ok(())
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.start_date.iter_days().take_while(|d| *d <= self.end_date).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaModel {
    pub name: String,
    pub manufacturer: String,
    pub technology: Technology,
    pub gain: f64,
}

/// Catalog of antenna models the generator draws from.
pub fn antenna_catalog() -> Vec<AntennaModel> {
    let m = |name: &str, manufacturer: &str, technology, gain| AntennaModel {
        name: name.into(),
        manufacturer: manufacturer.into(),
        technology,
        gain,
    };
    vec![
        m("AIR-3246", "Ericsson", Technology::Lte4g, 1.0),
        m("AIR-6488", "Ericsson", Technology::Lte4g, 1.3),
        m("AQU-4518", "Nokia", Technology::Lte4g, 0.85),
        m("AEQE", "Nokia", Technology::Lte4g, 1.1),
        m("ASI-4518", "Huawei", Technology::Lte4g, 0.95),
        m("AIR-3268", "Ericsson", Technology::Nr5g, 1.0),
        m("AEQU-64T", "Nokia", Technology::Nr5g, 1.25),
        m("AAU-5613", "Huawei", Technology::Nr5g, 1.1),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandBump {
    /// Offset from the field origin, meters east / north.
    pub east_m: f64,
    pub north_m: f64,
    pub amplitude: f64,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechnologyConstants {
    pub prb: f64,
    pub ul: f64,
    pub dl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthField {
    pub origin: GeoPoint,
    pub base_demand: f64,
    pub bumps: Vec<DemandBump>,
    pub antenna_gains: BTreeMap<String, f64>,
    pub lte: TechnologyConstants,
    pub nr: TechnologyConstants,
    pub region_kpi_scale: f64,
    pub noise_std: KpiNoise,
}

impl GroundTruthField {
    /// Demand at `p`, using a local tangent plane around the origin.
    pub fn demand(&self, p: GeoPoint) -> f64 {
        let (east, north) = local_offset(self.origin, p);
        self.base_demand
            + self
                .bumps
                .iter()
                .map(|b| {
                    let r2 = (east - b.east_m).powi(2) + (north - b.north_m).powi(2);
                    b.amplitude * (-r2 / (2.0 * b.sigma_m * b.sigma_m)).exp()
                })
                .sum::<f64>()
    }

    /// Mean demand along the boresight (or all around, for omni cells).
    pub fn boresight_demand(&self, cell: &CellInventoryEntry) -> f64 {
        let bearings: Vec<f64> = match cell.azimuth.bearing() {
            Some(b) => vec![b],
            None => (0..6).map(|i| 60.0 * i as f64).collect(),
        };
        let mut total = 0.0;
        let mut n = 0.0;
        for b in &bearings {
            for r in BORESIGHT_SAMPLES_M {
                total += self.demand(cell.position.destination(*b, r));
                n += 1.0;
            }
        }
        total / n
    }

    pub fn gain(&self, antenna_model: &str) -> f64 {
        self.antenna_gains.get(antenna_model).copied().unwrap_or(1.0)
    }

    /// Noiseless KPIs of `cell` on `date` (clipped to physical ranges).
    pub fn base_kpis(&self, cell: &CellInventoryEntry, date: NaiveDate) -> [f64; 3] {
        self.base_kpis_with_demand(cell, self.boresight_demand(cell), date)
    }

    fn base_kpis_with_demand(&self, cell: &CellInventoryEntry, demand: f64, date: NaiveDate) -> [f64; 3] {
        let load = demand * day_factor(date);
        let g = self.gain(&cell.antenna_model);
        let c = match cell.technology {
            Technology::Lte4g => self.lte,
            Technology::Nr5g => self.nr,
        };
        let s = self.region_kpi_scale;
        [
            Kpi::PrbUtil.clip(s * c.prb * load / g.sqrt()),
            Kpi::UlThroughput.clip(s * c.ul * g / (1.0 + 0.5 * load)),
            Kpi::DlThroughput.clip(s * c.dl * g / (1.0 + load)),
        ]
    }
}

fn day_factor(date: NaiveDate) -> f64 {
    match date.weekday() {
        Weekday::Sat | Weekday::Sun => WEEKEND_FACTOR,
        _ => 1.0,
    }
}

/// East/north offset of `p` from `origin` in meters.
fn local_offset(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let d = geodesic_distance(origin, p);
    if d == 0.0 {
        return (0.0, 0.0);
    }
    let b = initial_bearing(origin, p).unwrap_or(0.0).to_radians();
    (d * b.sin(), d * b.cos())
}

fn apply_noise(kpi: Kpi, base: f64, std: f64, rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    kpi.clip(base * (std * z).exp())
}

/// One noisy KPI record drawn around the planted base values.
pub fn oracle_kpi(field: &GroundTruthField, cell: &CellInventoryEntry, date: NaiveDate, rng: &mut impl Rng) -> KpiRecord {
    noisy_record(field, cell, field.boresight_demand(cell), date, rng)
}

fn noisy_record(
    field: &GroundTruthField,
    cell: &CellInventoryEntry,
    demand: f64,
    date: NaiveDate,
    rng: &mut impl Rng,
) -> KpiRecord {
    let base = field.base_kpis_with_demand(cell, demand, date);
    let v: Vec<f64> = Kpi::ALL
        .iter()
        .map(|&k| apply_noise(k, base[k.index()], field.noise_std.get(k), rng))
        .collect();
    KpiRecord {
        cell_id: cell.cell_id.clone(),
        date,
        prb_util: v[0],
        ul_throughput: v[1],
        dl_throughput: v[2],
    }
}

fn site_point(cfg: &ScenarioConfig, rng: &mut impl Rng) -> GeoPoint {
    let b = &cfg.region_bbox;
    GeoPoint::new(rng.gen_range(b.min_lat..=b.max_lat), rng.gen_range(b.min_lon..=b.max_lon))
        .expect("point inside validated bbox")
}

/// Places sites (hard-core point process), assigns sectors, antenna models and
/// 5G overlays, and draws the demand field.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<(Vec<CellInventoryEntry>, GroundTruthField)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let catalog = antenna_catalog();
    let manufacturers: Vec<&str> = {
        let mut m: Vec<&str> = catalog.iter().map(|a| a.manufacturer.as_str()).collect();
        m.sort_unstable();
        m.dedup();
        m
    };

    let mut sites: Vec<GeoPoint> = Vec::with_capacity(cfg.n_sites);
    while sites.len() < cfg.n_sites {
        let mut candidate = site_point(cfg, &mut rng);
        // dart throwing; give up on the separation after repeated misses
        for _ in 0..200 {
            if sites
                .iter()
                .all(|s| geodesic_distance(*s, candidate) >= cfg.layout.min_site_separation_m)
            {
                break;
            }
            candidate = site_point(cfg, &mut rng);
        }
        sites.push(candidate);
    }

    let n_5g = (cfg.share_5g_sites * cfg.n_sites as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_sites).collect();
    order.shuffle(&mut rng);
    let mut has_5g = vec![false; cfg.n_sites];
    for &i in &order[..n_5g] {
        has_5g[i] = true;
    }

    let mut inventory = Vec::new();
    for (i, &pos) in sites.iter().enumerate() {
        let site_id = format!("S{i:04}");
        let manufacturer = manufacturers[rng.gen_range(0..manufacturers.len())];
        let pick = |tech: Technology, rng: &mut ChaCha8Rng| -> &AntennaModel {
            let options: Vec<&AntennaModel> = catalog
                .iter()
                .filter(|a| a.technology == tech && a.manufacturer == manufacturer)
                .collect();
            options[rng.gen_range(0..options.len())]
        };
        let lte_model = pick(Technology::Lte4g, &mut rng);
        let omni = rng.gen_bool(cfg.layout.omni_share);
        let azimuths: Vec<Azimuth> = if omni {
            vec![Azimuth::omni()]
        } else {
            let step = 360.0 / cfg.layout.sectors as f64;
            (0..cfg.layout.sectors)
                .map(|s| {
                    let jitter = rng.gen_range(-1.0..=1.0) * cfg.layout.azimuth_jitter_deg;
                    Azimuth::degrees(s as f64 * step + jitter)
                })
                .collect()
        };
        for (s, az) in azimuths.iter().enumerate() {
            inventory.push(CellInventoryEntry {
                cell_id: format!("{site_id}-L{s}"),
                site_id: site_id.clone(),
                position: pos,
                azimuth: *az,
                technology: Technology::Lte4g,
                manufacturer: manufacturer.to_string(),
                antenna_model: lte_model.name.clone(),
            });
        }
        if has_5g[i] {
            let nr_model = pick(Technology::Nr5g, &mut rng);
            for (s, az) in azimuths.iter().enumerate() {
                let azimuth = match az.bearing() {
                    Some(b) => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        Azimuth::degrees(b + z * cfg.layout.nr_azimuth_jitter_deg)
                    }
                    None => Azimuth::omni(),
                };
                inventory.push(CellInventoryEntry {
                    cell_id: format!("{site_id}-N{s}"),
                    site_id: site_id.clone(),
                    position: pos,
                    azimuth,
                    technology: Technology::Nr5g,
                    manufacturer: manufacturer.to_string(),
                    antenna_model: nr_model.name.clone(),
                });
            }
        }
    }

    let (ns, ew) = cfg.region_bbox.extent_m();
    let n_bumps = ((ns * ew / 1e6) * cfg.bump_density_per_km2).ceil().max(1.0) as usize;
    let bumps = (0..n_bumps)
        .map(|_| DemandBump {
            east_m: rng.gen_range(-0.6..=0.6) * ew,
            north_m: rng.gen_range(-0.6..=0.6) * ns,
            amplitude: rng.gen_range(0.3..=1.2),
            sigma_m: rng.gen_range(300.0..=900.0),
        })
        .collect();
    let field = GroundTruthField {
        origin: cfg.region_bbox.center(),
        base_demand: 0.3,
        bumps,
        antenna_gains: catalog.iter().map(|a| (a.name.clone(), a.gain)).collect(),
        lte: TechnologyConstants {
            prb: 40.0,
            ul: 6.0,
            dl: 40.0,
        },
        nr: TechnologyConstants {
            prb: 28.0,
            ul: 15.0,
            dl: 180.0,
        },
        region_kpi_scale: cfg.region_kpi_scale,
        noise_std: cfg.noise_std,
    };
    Ok((inventory, field))
}

/// Noisy daily records for every cell and date, in inventory × date order.
pub fn simulate_kpis(
    field: &GroundTruthField,
    inventory: &[CellInventoryEntry],
    dates: &[NaiveDate],
    seed: u64,
) -> Result<KpiTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut table = KpiTable::new();
    for cell in inventory {
        let demand = field.boresight_demand(cell);
        for &date in dates {
            table.insert(noisy_record(field, cell, demand, date, &mut rng))?;
        }
    }
    Ok(table)
}

/// A generated region: inventory, ground truth and the simulated KPI table.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub inventory: Vec<CellInventoryEntry>,
    pub field: GroundTruthField,
    pub kpis: KpiTable,
}

impl Scenario {
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        let (inventory, field) = generate_scenario(cfg)?;
        let kpis = simulate_kpis(&field, &inventory, &cfg.dates(), cfg.seed)?;
        Ok(Self {
            config: cfg.clone(),
            inventory,
            field,
            kpis,
        })
    }

    /// Writes `inventory.csv`, `kpi.csv` and `scenario.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_inventory(&self.inventory, fs::File::create(dir.join("inventory.csv"))?)?;
        write_kpis(&self.kpis, fs::File::create(dir.join("kpi.csv"))?)?;
        let echo = serde_json::json!({ "config": self.config, "ground_truth": self.field });
        fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&echo)? + "\n")?;
        Ok(())
    }
}

/// Monte-Carlo MAPE (percent) of the noiseless base values scored against noisy
/// labels, per KPI, over `draws` random `(5G cell, date)` pairs.
pub fn noise_floor(
    field: &GroundTruthField,
    inventory: &[CellInventoryEntry],
    dates: &[NaiveDate],
    draws: usize,
    seed: u64,
) -> [f64; 3] {
    let targets: Vec<&CellInventoryEntry> = inventory
        .iter()
        .filter(|c| c.technology == Technology::Nr5g)
        .collect();
    let pool: Vec<&CellInventoryEntry> = if targets.is_empty() {
        inventory.iter().collect()
    } else {
        targets
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let cell = pool[rng.gen_range(0..pool.len())];
        let date = dates[rng.gen_range(0..dates.len())];
        let base = field.base_kpis(cell, date);
        for k in Kpi::ALL {
            let truth = apply_noise(k, base[k.index()], field.noise_std.get(k), &mut rng);
            if truth > crate::harness::APE_FLOOR {
                sums[k.index()] += 100.0 * (base[k.index()] - truth).abs() / truth;
                counts[k.index()] += 1;
            }
        }
    }
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 };
    }
    out
}
