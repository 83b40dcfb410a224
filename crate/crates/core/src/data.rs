//! Cell inventory and KPI schemas, CSV ingestion, normalization and node encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, Azimuth, GeoPoint, CO_LOCATION_THRESHOLD_M};

pub const INVENTORY_HEADER: [&str; 9] = [
    "cell_id",
    "site_id",
    "lat",
    "lon",
    "azimuth_deg",
    "is_omni",
    "technology",
    "manufacturer",
    "antenna_model",
];

pub const KPI_HEADER: [&str; 5] = ["cell_id", "date", "prb_util_pct", "ul_thr_mbps", "dl_thr_mbps"];

/// Std-dev floor applied when fitting z-score transforms.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technology {
    #[serde(rename = "4G")]
    Lte4g,
    #[serde(rename = "5G")]
    Nr5g,
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technology::Lte4g => "4G",
            Technology::Nr5g => "5G",
        })
    }
}

impl FromStr for Technology {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "4G" => Ok(Technology::Lte4g),
            "5G" => Ok(Technology::Nr5g),
            other => Err(format!("technology must be 4G or 5G, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellInventoryEntry {
    pub cell_id: String,
    pub site_id: String,
    pub position: GeoPoint,
    pub azimuth: Azimuth,
    pub technology: Technology,
    pub manufacturer: String,
    pub antenna_model: String,
}

/// One of the three predicted indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kpi {
    PrbUtil,
    UlThroughput,
    DlThroughput,
}

impl Kpi {
    pub const ALL: [Kpi; 3] = [Kpi::PrbUtil, Kpi::UlThroughput, Kpi::DlThroughput];

    pub fn name(&self) -> &'static str {
        match self {
            Kpi::PrbUtil => "prb_util",
            Kpi::UlThroughput => "ul_throughput",
            Kpi::DlThroughput => "dl_throughput",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    /// Clamps a value into the physical range of this indicator.
    pub fn clip(&self, value: f64) -> f64 {
        match self {
            Kpi::PrbUtil => value.clamp(0.0, 100.0),
            Kpi::UlThroughput | Kpi::DlThroughput => value.max(0.0),
        }
    }

    pub fn in_range(&self, value: f64) -> bool {
        value.is_finite()
            && match self {
                Kpi::PrbUtil => (0.0..=100.0).contains(&value),
                Kpi::UlThroughput | Kpi::DlThroughput => value >= 0.0,
            }
    }
}

impl fmt::Display for Kpi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kpi {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Kpi::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown KPI {s:?} (expected prb_util, ul_throughput or dl_throughput)"))
    }
}

/// One cell-day of daily-average KPIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub cell_id: String,
    pub date: NaiveDate,
    pub prb_util: f64,
    pub ul_throughput: f64,
    pub dl_throughput: f64,
}

impl KpiRecord {
    pub fn get(&self, kpi: Kpi) -> f64 {
        match kpi {
            Kpi::PrbUtil => self.prb_util,
            Kpi::UlThroughput => self.ul_throughput,
            Kpi::DlThroughput => self.dl_throughput,
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.prb_util, self.ul_throughput, self.dl_throughput]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for kpi in Kpi::ALL {
            let v = self.get(kpi);
            if !kpi.in_range(v) {
                let field = KPI_HEADER[2 + kpi.index()];
                return Err(format!("{field} out of range: {v}"));
            }
        }
        Ok(())
    }
}

/// KPI records keyed by `(cell_id, date)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KpiTable {
    by_cell: BTreeMap<String, BTreeMap<NaiveDate, KpiRecord>>,
    len: usize,
}

impl KpiTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = KpiRecord>) -> Result<Self> {
        let mut table = Self::new();
        for r in records {
            table.insert(r)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, record: KpiRecord) -> Result<()> {
        let per_cell = self.by_cell.entry(record.cell_id.clone()).or_default();
        if per_cell.contains_key(&record.date) {
            return Err(Error::DuplicateRecord {
                cell_id: record.cell_id,
                date: record.date,
            });
        }
        per_cell.insert(record.date, record);
        self.len += 1;
        Ok(())
    }

    pub fn get(&self, cell_id: &str, date: NaiveDate) -> Option<&KpiRecord> {
        self.by_cell.get(cell_id)?.get(&date)
    }

    /// Mean of the records of `cell_id` over the `days` days ending at `date`.
    /// Returns `None` when no record falls inside the window.
    pub fn trailing_mean(&self, cell_id: &str, date: NaiveDate, days: u32) -> Option<KpiRecord> {
        if days <= 1 {
            return self.get(cell_id, date).cloned();
        }
        let start = date - chrono::Duration::days(i64::from(days) - 1);
        let window: Vec<&KpiRecord> = self.by_cell.get(cell_id)?.range(start..=date).map(|(_, r)| r).collect();
        if window.is_empty() {
            return None;
        }
        let n = window.len() as f64;
        let mut sums = [0.0; 3];
        for r in &window {
            for (s, v) in sums.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        Some(KpiRecord {
            cell_id: cell_id.to_string(),
            date,
            prb_util: sums[0] / n,
            ul_throughput: sums[1] / n,
            dl_throughput: sums[2] / n,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// All records ordered by `(cell_id, date)`.
    pub fn iter(&self) -> impl Iterator<Item = &KpiRecord> {
        self.by_cell.values().flat_map(|m| m.values())
    }

    pub fn dates(&self) -> BTreeSet<NaiveDate> {
        self.iter().map(|r| r.date).collect()
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn check_header(path: &Path, reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(field: &str, raw: &str) -> std::result::Result<f64, String> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("{field}: not a number: {raw:?}"))?;
    if !v.is_finite() {
        return Err(format!("{field}: not finite"));
    }
    Ok(v)
}

fn parse_inventory_row(row: &csv::StringRecord) -> std::result::Result<CellInventoryEntry, String> {
    let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
    let cell_id = field(0);
    if cell_id.is_empty() {
        return Err("cell_id: empty".into());
    }
    let lat = parse_f64("lat", field(2))?;
    let lon = parse_f64("lon", field(3))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat: out of range: {lat}"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon: out of range: {lon}"));
    }
    let position = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let is_omni = match field(5) {
        "1" | "true" => true,
        "0" | "false" => false,
        other => return Err(format!("is_omni: expected 0 or 1, got {other:?}")),
    };
    let azimuth = if is_omni {
        Azimuth::omni()
    } else {
        let az = parse_f64("azimuth_deg", field(4))?;
        if !(0.0..360.0).contains(&az) {
            return Err(format!("azimuth_deg: out of range: {az}"));
        }
        Azimuth::degrees(az)
    };
    let technology = field(6).parse().map_err(|e: String| format!("technology: {e}"))?;
    Ok(CellInventoryEntry {
        cell_id: cell_id.to_string(),
        site_id: field(1).to_string(),
        position,
        azimuth,
        technology,
        manufacturer: field(7).to_string(),
        antenna_model: field(8).to_string(),
    })
}

pub fn read_inventory(path: &Path, input: impl Read) -> Result<Vec<CellInventoryEntry>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(path, &mut reader, &INVENTORY_HEADER)?;
    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        if row.len() != INVENTORY_HEADER.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", INVENTORY_HEADER.len(), row.len()),
            ));
        }
        entries.push(parse_inventory_row(&row).map_err(|reason| parse_err(path, line, reason))?);
    }
    validate_inventory(&entries)?;
    Ok(entries)
}

pub fn load_inventory(path: impl AsRef<Path>) -> Result<Vec<CellInventoryEntry>> {
    let path = path.as_ref();
    read_inventory(path, std::fs::File::open(path)?)
}

/// Enforces unique cell ids and one position per site.
pub fn validate_inventory(entries: &[CellInventoryEntry]) -> Result<()> {
    let mut ids = BTreeSet::new();
    let mut sites: HashMap<&str, GeoPoint> = HashMap::new();
    for e in entries {
        if !ids.insert(e.cell_id.as_str()) {
            return Err(Error::DuplicateCellId(e.cell_id.clone()));
        }
        match sites.get(e.site_id.as_str()) {
            Some(&pos) => {
                let d = geodesic_distance(pos, e.position);
                if d >= CO_LOCATION_THRESHOLD_M {
                    return Err(Error::InconsistentSitePosition {
                        site_id: e.site_id.clone(),
                        distance_m: d,
                    });
                }
            }
            None => {
                sites.insert(&e.site_id, e.position);
            }
        }
    }
    Ok(())
}

pub fn write_inventory(entries: &[CellInventoryEntry], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INVENTORY_HEADER)?;
    for e in entries {
        let (az, omni) = match e.azimuth.bearing() {
            Some(v) => (v.to_string(), "0"),
            None => (String::new(), "1"),
        };
        w.write_record([
            e.cell_id.as_str(),
            e.site_id.as_str(),
            &e.position.lat().to_string(),
            &e.position.lon().to_string(),
            &az,
            omni,
            &e.technology.to_string(),
            &e.manufacturer,
            &e.antenna_model,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kpis(path: &Path, input: impl Read) -> Result<KpiTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(path, &mut reader, &KPI_HEADER)?;
    let mut table = KpiTable::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let record = parse_kpi_row(&row).map_err(|reason| parse_err(path, line, reason))?;
        table.insert(record)?;
    }
    Ok(table)
}

fn parse_kpi_row(row: &csv::StringRecord) -> std::result::Result<KpiRecord, String> {
    if row.len() != KPI_HEADER.len() {
        return Err(format!("expected {} fields, got {}", KPI_HEADER.len(), row.len()));
    }
    let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
    let cell_id = field(0);
    if cell_id.is_empty() {
        return Err("cell_id: empty".into());
    }
    let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
        .map_err(|_| format!("date: expected YYYY-MM-DD, got {:?}", field(1)))?;
    let record = KpiRecord {
        cell_id: cell_id.to_string(),
        date,
        prb_util: parse_f64("prb_util_pct", field(2))?,
        ul_throughput: parse_f64("ul_thr_mbps", field(3))?,
        dl_throughput: parse_f64("dl_thr_mbps", field(4))?,
    };
    record.validate()?;
    Ok(record)
}

pub fn load_kpis(path: impl AsRef<Path>) -> Result<KpiTable> {
    let path = path.as_ref();
    read_kpis(path, std::fs::File::open(path)?)
}

pub fn write_kpis(table: &KpiTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(KPI_HEADER)?;
    for r in table.iter() {
        w.write_record([
            r.cell_id.as_str(),
            &r.date.format("%Y-%m-%d").to_string(),
            &r.prb_util.to_string(),
            &r.ul_throughput.to_string(),
            &r.dl_throughput.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Invertible per-feature scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    ZScore { mean: f64, std: f64 },
    Log1pZScore { mean: f64, std: f64 },
    UnitInterval { scale: f64 },
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Transform::ZScore { mean, std } => (x - mean) / std,
            Transform::Log1pZScore { mean, std } => (x.ln_1p() - mean) / std,
            Transform::UnitInterval { scale } => x * scale,
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        match *self {
            Transform::ZScore { mean, std } => z * std + mean,
            Transform::Log1pZScore { mean, std } => (z * std + mean).exp_m1(),
            Transform::UnitInterval { scale } => z / scale,
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            Transform::ZScore { mean, std } | Transform::Log1pZScore { mean, std } => {
                mean.is_finite() && std.is_finite() && std > 0.0
            }
            Transform::UnitInterval { scale } => scale.is_finite() && scale != 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub prb_util: Transform,
    pub ul_throughput: Transform,
    pub dl_throughput: Transform,
    pub fitted_on: String,
}

impl NormalizationSpec {
    pub fn transform(&self, kpi: Kpi) -> &Transform {
        match kpi {
            Kpi::PrbUtil => &self.prb_util,
            Kpi::UlThroughput => &self.ul_throughput,
            Kpi::DlThroughput => &self.dl_throughput,
        }
    }

    pub fn normalize(&self, kpi: Kpi, x: f64) -> f64 {
        self.transform(kpi).apply(x)
    }

    pub fn denormalize(&self, kpi: Kpi, z: f64) -> f64 {
        self.transform(kpi).invert(z)
    }

    pub fn validate(&self) -> Result<()> {
        for kpi in Kpi::ALL {
            if !self.transform(kpi).is_valid() {
                return Err(Error::Checkpoint(format!("invalid normalization for {kpi}")));
            }
        }
        Ok(())
    }
}

fn log_zscore(values: impl Iterator<Item = f64>) -> Transform {
    let logs: Vec<f64> = values.map(f64::ln_1p).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Transform::Log1pZScore {
        mean,
        std: var.sqrt().max(STD_FLOOR),
    }
}

/// Fits transforms on the records dated inside `training_dates` only.
pub fn fit_normalization(
    records: &KpiTable,
    training_dates: &BTreeSet<NaiveDate>,
    fitted_on: &str,
) -> Result<NormalizationSpec> {
    let train: Vec<&KpiRecord> = records
        .iter()
        .filter(|r| training_dates.contains(&r.date))
        .collect();
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(NormalizationSpec {
        prb_util: Transform::UnitInterval { scale: 0.01 },
        ul_throughput: log_zscore(train.iter().map(|r| r.ul_throughput)),
        dl_throughput: log_zscore(train.iter().map(|r| r.dl_throughput)),
        fitted_on: fitted_on.to_string(),
    })
}

/// Sorted category lists; index `len()` is the shared "unknown" bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub manufacturers: Vec<String>,
    pub antenna_models: Vec<String>,
}

impl Vocabulary {
    pub fn fit<'a>(entries: impl IntoIterator<Item = &'a CellInventoryEntry>) -> Self {
        let mut manufacturers = BTreeSet::new();
        let mut antenna_models = BTreeSet::new();
        for e in entries {
            manufacturers.insert(e.manufacturer.clone());
            antenna_models.insert(e.antenna_model.clone());
        }
        Self {
            manufacturers: manufacturers.into_iter().collect(),
            antenna_models: antenna_models.into_iter().collect(),
        }
    }

    fn slot(list: &[String], value: &str) -> usize {
        list.binary_search_by(|probe| probe.as_str().cmp(value))
            .unwrap_or(list.len())
    }

    /// Width of an encoded node: 3 KPI slots, both one-hots with unknown buckets,
    /// `is_target` and `kpi_present`.
    pub fn node_dim(&self) -> usize {
        3 + self.manufacturers.len() + 1 + self.antenna_models.len() + 1 + 2
    }
}

/// Offsets of the flag slots inside an encoded node.
pub fn flag_offsets(vocab: &Vocabulary) -> (usize, usize) {
    let dim = vocab.node_dim();
    (dim - 2, dim - 1)
}

/// Encodes one cell. 5G cells are prediction targets: KPI slots stay zero and
/// `is_target` is set. 4G cells without a record get `kpi_present = 0`.
pub fn encode_node(
    entry: &CellInventoryEntry,
    kpis: Option<&KpiRecord>,
    spec: &NormalizationSpec,
    vocab: &Vocabulary,
) -> Vec<f64> {
    let mut v = vec![0.0; vocab.node_dim()];
    let is_target = entry.technology == Technology::Nr5g;
    if !is_target {
        if let Some(r) = kpis {
            for kpi in Kpi::ALL {
                v[kpi.index()] = spec.normalize(kpi, r.get(kpi));
            }
        }
    }
    let m_off = 3;
    v[m_off + Vocabulary::slot(&vocab.manufacturers, &entry.manufacturer)] = 1.0;
    let a_off = m_off + vocab.manufacturers.len() + 1;
    v[a_off + Vocabulary::slot(&vocab.antenna_models, &entry.antenna_model)] = 1.0;
    let (target_slot, present_slot) = flag_offsets(vocab);
    if is_target {
        v[target_slot] = 1.0;
    } else if kpis.is_some() {
        v[present_slot] = 1.0;
    }
    v
}
