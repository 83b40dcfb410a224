//! Experiment orchestration: temporal splits, training, APE evaluation,
//! cross-region transfer and the planning benchmark.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind, ModelParams, CHECKPOINT_VERSION};
use crate::data::{
    fit_normalization, load_inventory, load_kpis, validate_inventory, CellInventoryEntry, Kpi, KpiTable,
    NormalizationSpec, Technology, Vocabulary,
};
use crate::error::{Error, Result};
use crate::geometry::{Azimuth, GeoPoint};
use crate::gnn::{self, GnnHyperparams, GnnOptimizer};
use crate::graph::{GraphBuildConfig, PlanningSubgraph, SpatialIndex, SubgraphTemplate};
use crate::mlr::{self, MlrLayout, DEFAULT_RIDGE_LAMBDA};
use crate::synth::{antenna_catalog, BoundingBox, Scenario, ScenarioConfig};

/// Labels at or below this value (physical units) are excluded from APE.
pub const APE_FLOOR: f64 = 1e-3;

/// Absolute percentage error.
pub fn ape(pred: f64, truth: f64) -> Result<f64> {
    if !(truth > APE_FLOOR) {
        return Err(Error::LabelBelowFloor { truth });
    }
    Ok(100.0 * (pred - truth).abs() / truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    /// Last test date; all dates after `train_end` when absent.
    pub test_end: Option<NaiveDate>,
    /// Share of the training period, taken from its end, held out for validation.
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_start: NaiveDate::from_ymd_opt(2022, 10, 1).expect("date"),
            train_end: NaiveDate::from_ymd_opt(2022, 10, 31).expect("date"),
            test_end: None,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_dates: BTreeSet<NaiveDate>,
    pub val_dates: BTreeSet<NaiveDate>,
    pub test_dates: BTreeSet<NaiveDate>,
}

impl SplitSpec {
    /// Splits `available` dates by time: training period first, its last
    /// `val_fraction` held out, everything after it for testing.
    pub fn temporal(available: &BTreeSet<NaiveDate>, cfg: &SplitConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must be in [0, 1)".into()));
        }
        if cfg.train_end < cfg.train_start {
            return Err(Error::InvalidConfig("train_end precedes train_start".into()));
        }
        let period: Vec<NaiveDate> = available
            .range(cfg.train_start..=cfg.train_end)
            .copied()
            .collect();
        let n_val = (period.len() as f64 * cfg.val_fraction).round() as usize;
        let n_train = period.len() - n_val.min(period.len());
        let test_dates = available
            .iter()
            .filter(|d| **d > cfg.train_end && cfg.test_end.map_or(true, |end| **d <= end))
            .copied()
            .collect();
        let split = Self {
            train_dates: period[..n_train].iter().copied().collect(),
            val_dates: period[n_train..].iter().copied().collect(),
            test_dates,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_dates.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let disjoint = self.train_dates.is_disjoint(&self.val_dates)
            && self.train_dates.is_disjoint(&self.test_dates)
            && self.val_dates.is_disjoint(&self.test_dates);
        if !disjoint {
            return Err(Error::InvalidConfig("split date sets overlap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub graph: GraphBuildConfig,
    pub ridge_lambda: f64,
    /// Give the linear baseline the target-edge geometry of every slot.
    pub mlr_include_geometry: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gnn,
            graph: GraphBuildConfig::default(),
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            mlr_include_geometry: true,
        }
    }
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub hyperparams: GnnHyperparams,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            hyperparams: GnnHyperparams::default(),
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Inventory plus KPI history of one region.
#[derive(Debug, Clone)]
pub struct RegionData {
    pub inventory: Vec<CellInventoryEntry>,
    pub kpis: KpiTable,
}

impl RegionData {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            inventory: s.inventory.clone(),
            kpis: s.kpis.clone(),
        }
    }

    /// Reads `inventory.csv` and `kpi.csv` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let inventory = load_inventory(dir.join("inventory.csv"))?;
        validate_inventory(&inventory)?;
        let kpis = load_kpis(dir.join("kpi.csv"))?;
        Ok(Self { inventory, kpis })
    }
}

/// One `(5G cell, date)` prediction problem.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cell_id: Arc<str>,
    pub date: NaiveDate,
    pub graph: PlanningSubgraph,
    /// Observed KPIs in physical units, indexed by [`Kpi::index`].
    pub truth: [f64; 3],
}

/// Encoders fitted on the training region.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    pub normalization: NormalizationSpec,
    pub vocabulary: Vocabulary,
}

impl Encoders {
    pub fn fit(region: &RegionData, split: &SplitSpec) -> Result<Self> {
        Ok(Self {
            normalization: fit_normalization(&region.kpis, &split.train_dates, "train")?,
            vocabulary: Vocabulary::fit(&region.inventory),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub encoders: Encoders,
    pub graph: GraphBuildConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Builds subgraphs for every 5G cell with a record on each split date.
/// Topology is computed once per cell and shared across dates.
pub fn prepare(region: &RegionData, split: &SplitSpec, graph: &GraphBuildConfig, encoders: Encoders) -> Result<PreparedData> {
    split.validate()?;
    let index = SpatialIndex::build(&region.inventory)?;
    let mut targets: Vec<&CellInventoryEntry> = region
        .inventory
        .iter()
        .filter(|c| c.technology == Technology::Nr5g)
        .collect();
    targets.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let templates = targets
        .iter()
        .map(|c| SubgraphTemplate::build(&index, c, graph))
        .collect::<Result<Vec<_>>>()?;
    let build = |dates: &BTreeSet<NaiveDate>| -> Vec<Sample> {
        let mut out = Vec::new();
        for date in dates {
            for (cell, template) in targets.iter().zip(&templates) {
                if let Some(record) = region.kpis.get(&cell.cell_id, *date) {
                    out.push(Sample {
                        cell_id: Arc::from(cell.cell_id.as_str()),
                        date: *date,
                        graph: template.instantiate(
                            &index,
                            *date,
                            &region.kpis,
                            &encoders.normalization,
                            &encoders.vocabulary,
                            graph,
                        ),
                        truth: record.values(),
                    });
                }
            }
        }
        out
    };
    let train = build(&split.train_dates);
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(PreparedData {
        val: build(&split.val_dates),
        test: build(&split.test_dates),
        train,
        encoders,
        graph: *graph,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApeQuantiles {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kpi: Kpi,
    pub model: ModelKind,
    /// Mean APE in percent over scored samples.
    pub mape: f64,
    pub ape_quantiles: ApeQuantiles,
    pub total_samples: usize,
    pub scored_samples: usize,
    /// Samples whose label fell below the APE floor.
    pub excluded_samples: usize,
    pub low_confidence_share: f64,
    pub clipped_predictions: usize,
}

/// One row of the per-sample dump.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub cell_id: Arc<str>,
    pub date: NaiveDate,
    pub kpi: Kpi,
    pub pred: f64,
    pub truth: f64,
    pub ape: Option<f64>,
    pub low_confidence: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(kpi: Kpi, model: ModelKind, rows: &[SampleResult], clipped: usize) -> EvalReport {
    let apes: Vec<f64> = rows.iter().filter_map(|r| r.ape).collect();
    let mut sorted = apes.clone();
    sorted.sort_by(f64::total_cmp);
    let mape = if apes.is_empty() {
        0.0
    } else {
        apes.iter().sum::<f64>() / apes.len() as f64
    };
    let low = rows.iter().filter(|r| r.low_confidence).count();
    EvalReport {
        kpi,
        model,
        mape,
        ape_quantiles: ApeQuantiles {
            p25: quantile(&sorted, 0.25),
            p50: quantile(&sorted, 0.50),
            p75: quantile(&sorted, 0.75),
            p95: quantile(&sorted, 0.95),
        },
        total_samples: rows.len(),
        scored_samples: apes.len(),
        excluded_samples: rows.len() - apes.len(),
        low_confidence_share: if rows.is_empty() { 0.0 } else { low as f64 / rows.len() as f64 },
        clipped_predictions: clipped,
    }
}

/// Scores `predict` (normalized output) on `samples` in physical units.
fn evaluate_with<F>(kpi: Kpi, model: ModelKind, spec: &NormalizationSpec, samples: &[Sample], mut predict: F) -> Result<(EvalReport, Vec<SampleResult>)>
where
    F: FnMut(&PlanningSubgraph) -> Result<f64>,
{
    let mut rows = Vec::with_capacity(samples.len());
    let mut clipped = 0;
    for s in samples {
        let p = gnn::to_physical(spec, kpi, predict(&s.graph)?);
        clipped += usize::from(p.clipped);
        let truth = s.truth[kpi.index()];
        rows.push(SampleResult {
            cell_id: s.cell_id.clone(),
            date: s.date,
            kpi,
            pred: p.value,
            truth,
            ape: ape(p.value, truth).ok(),
            low_confidence: s.graph.low_confidence,
        });
    }
    Ok((summarize(kpi, model, &rows, clipped), rows))
}

pub fn evaluate_checkpoint(ck: &Checkpoint, samples: &[Sample]) -> Result<(EvalReport, Vec<SampleResult>)> {
    evaluate_with(ck.kpi, ck.kind(), &ck.normalization, samples, |g| ck.predict_normalized(g))
}

/// Writes the per-sample dump as CSV. Floats use shortest round-trip formatting.
pub fn write_sample_csv(rows: &[SampleResult], mut out: impl Write) -> Result<()> {
    let mut buf = String::from("cell_id,date,kpi,pred,truth,ape,low_confidence\n");
    for r in rows {
        let ape = r.ape.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            r.cell_id,
            r.date,
            r.kpi.name(),
            r.pred,
            r.truth,
            ape,
            r.low_confidence
        )
        .expect("string write");
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_mape: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_days: usize,
    pub val_days: usize,
    pub test_days: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
}

/// Deterministic training report. Wall-clock figures live in [`Timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub kpi: Kpi,
    pub seed: u64,
    pub split: SplitSummary,
    pub training: TrainingLog,
    pub test: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub samples: Vec<SampleResult>,
    pub timing: Timing,
}

fn split_summary(split: &SplitSpec, data: &PreparedData) -> SplitSummary {
    SplitSummary {
        train_days: split.train_dates.len(),
        val_days: split.val_dates.len(),
        test_days: split.test_dates.len(),
        train_samples: data.train.len(),
        val_samples: data.val.len(),
        test_samples: data.test.len(),
    }
}

fn checkpoint(kpi: Kpi, data: &PreparedData, model: ModelParams) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        kpi,
        graph: data.graph,
        normalization: data.encoders.normalization.clone(),
        vocabulary: data.encoders.vocabulary.clone(),
        model,
    }
}

/// Reported after every GNN epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochProgress {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mape: f64,
}

fn train_gnn(
    kpi: Kpi,
    data: &PreparedData,
    hp: &GnnHyperparams,
    seed: u64,
    progress: &mut dyn FnMut(EpochProgress),
) -> Result<(Checkpoint, TrainingLog)> {
    let spec = &data.encoders.normalization;
    let node_dim = data.encoders.vocabulary.node_dim();
    let mut params = gnn::init_params(hp, node_dim, seed)?;
    let mut opt = GnnOptimizer::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let labels: Vec<f64> = data
        .train
        .iter()
        .map(|s| spec.normalize(kpi, s.truth[kpi.index()]))
        .collect();
    params.output = gnn::OutputScaling::fit(&labels);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = TrainingLog {
        epochs_run: 0,
        best_epoch: 0,
        train_loss: Vec::new(),
        val_mape: Vec::new(),
    };
    let mut best: Option<(f64, gnn::GnnParameters)> = None;
    let mut since_best = 0;
    let steps_per_epoch = data.train.len().div_ceil(hp.batch_size);
    let total_steps = (hp.max_epochs * steps_per_epoch).max(1) as f64;
    for epoch in 0..hp.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(hp.batch_size).enumerate() {
            opt.set_learning_rate(hp.learning_rate_at((epoch * steps_per_epoch + step) as f64 / total_steps));
            let batch: Vec<(&PlanningSubgraph, f64)> = chunk.iter().map(|&i| (&data.train[i].graph, labels[i])).collect();
            let l = gnn::train_step(&mut params, &batch, &mut opt).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, step },
                other => other,
            })?;
            loss_sum += l * chunk.len() as f64;
        }
        log.train_loss.push(loss_sum / data.train.len() as f64);
        log.epochs_run = epoch + 1;
        // without validation dates the training loss drives selection
        let score = if data.val.is_empty() {
            *log.train_loss.last().expect("loss")
        } else {
            evaluate_with(kpi, ModelKind::Gnn, spec, &data.val, |g| gnn::forward(&params, g))?.0.mape
        };
        log.val_mape.push(score);
        progress(EpochProgress {
            epoch: epoch + 1,
            train_loss: *log.train_loss.last().expect("loss"),
            val_mape: score,
        });
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, params.clone()));
            log.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.early_stop_patience {
                break;
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((checkpoint(kpi, data, ModelParams::Gnn(params)), log))
}

fn mlr_layout(data: &PreparedData, cfg: &ModelConfig, hp: &GnnHyperparams) -> MlrLayout {
    MlrLayout {
        k: data.graph.k,
        node_dim: data.encoders.vocabulary.node_dim(),
        include_geometry: cfg.mlr_include_geometry,
        distance_scale: hp.distance_scale,
    }
}

fn train_mlr(kpi: Kpi, data: &PreparedData, cfg: &ModelConfig, hp: &GnnHyperparams) -> Result<(Checkpoint, TrainingLog)> {
    let spec = &data.encoders.normalization;
    let layout = mlr_layout(data, cfg, hp);
    let samples = data
        .train
        .iter()
        .map(|s| Ok((mlr::assemble_vector(&s.graph, &layout)?, spec.normalize(kpi, s.truth[kpi.index()]))))
        .collect::<Result<Vec<_>>>()?;
    let params = mlr::fit(&samples, cfg.ridge_lambda, layout)?;
    let val_mape = if data.val.is_empty() {
        Vec::new()
    } else {
        vec![evaluate_with(kpi, ModelKind::Mlr, spec, &data.val, |g| mlr::predict_graph(&params, g))?.0.mape]
    };
    let log = TrainingLog {
        epochs_run: 1,
        best_epoch: 1,
        train_loss: Vec::new(),
        val_mape,
    };
    Ok((checkpoint(kpi, data, ModelParams::Mlr(params)), log))
}

/// Trains one model for one KPI on prepared data and scores it on the test dates.
pub fn train_on(data: &PreparedData, split: &SplitSpec, cfg: &ExperimentConfig, kpi: Kpi) -> Result<TrainOutcome> {
    train_on_with(data, split, cfg, kpi, &mut |_| {})
}

/// [`train_on`] with a per-epoch callback.
pub fn train_on_with(
    data: &PreparedData,
    split: &SplitSpec,
    cfg: &ExperimentConfig,
    kpi: Kpi,
    progress: &mut dyn FnMut(EpochProgress),
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let (checkpoint, training) = match cfg.model.kind {
        ModelKind::Gnn => train_gnn(kpi, data, &cfg.hyperparams, cfg.seed, progress)?,
        ModelKind::Mlr => train_mlr(kpi, data, &cfg.model, &cfg.hyperparams)?,
    };
    let train_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let (test, samples) = evaluate_checkpoint(&checkpoint, &data.test)?;
    let eval_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        report: TrainReport {
            model: cfg.model.kind,
            kpi,
            seed: cfg.seed,
            split: split_summary(split, data),
            training,
            test,
        },
        checkpoint,
        samples,
        timing: Timing {
            train_seconds,
            eval_seconds,
        },
    })
}

/// Normalization is fitted on the training dates only.
pub fn run_training(region: &RegionData, cfg: &ExperimentConfig, kpi: Kpi) -> Result<TrainOutcome> {
    run_training_with(region, cfg, kpi, &mut |_| {})
}

pub fn run_training_with(
    region: &RegionData,
    cfg: &ExperimentConfig,
    kpi: Kpi,
    progress: &mut dyn FnMut(EpochProgress),
) -> Result<TrainOutcome> {
    cfg.hyperparams.validate()?;
    let split = SplitSpec::temporal(&region.kpis.dates(), &cfg.split)?;
    let encoders = Encoders::fit(region, &split)?;
    let data = prepare(region, &split, &cfg.model.graph, encoders)?;
    train_on_with(&data, &split, cfg, kpi, progress)
}

/// Test-date samples of another region, encoded with the checkpoint's own
/// normalization and vocabulary (no refit).
pub fn prepare_transfer(ck: &Checkpoint, region: &RegionData, split_cfg: &SplitConfig) -> Result<(SplitSpec, PreparedData)> {
    let split = SplitSpec::temporal(&region.kpis.dates(), split_cfg)?;
    let encoders = Encoders {
        normalization: ck.normalization.clone(),
        vocabulary: ck.vocabulary.clone(),
    };
    let data = prepare(region, &split, &ck.graph, encoders)?;
    Ok((split, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub model: ModelKind,
    pub kpi: Kpi,
    pub seed: u64,
    pub region_a: EvalReport,
    pub region_b: EvalReport,
    /// `region_b.mape - region_a.mape`, percentage points.
    pub gap: f64,
}

pub fn generalization_report(a: EvalReport, b: EvalReport, seed: u64) -> GeneralizationReport {
    GeneralizationReport {
        model: a.model,
        kpi: a.kpi,
        seed,
        gap: b.mape - a.mape,
        region_a: a,
        region_b: b,
    }
}

/// Trains on region A and scores on the test dates of both regions.
pub fn run_generalization(
    region_a: &RegionData,
    region_b: &RegionData,
    cfg: &ExperimentConfig,
    kpi: Kpi,
) -> Result<(GeneralizationReport, TrainOutcome)> {
    let trained = run_training(region_a, cfg, kpi)?;
    let (_, data_b) = prepare_transfer(&trained.checkpoint, region_b, &cfg.split)?;
    let (report_b, _) = evaluate_checkpoint(&trained.checkpoint, &data_b.test)?;
    let report = generalization_report(trained.report.test.clone(), report_b, cfg.seed);
    Ok((report, trained))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_candidates: usize,
    pub n_schemes: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_candidates: 8000,
            n_schemes: 10,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: ModelKind,
    pub kpi: Kpi,
    pub predictions: usize,
    pub total_seconds: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub low_confidence: usize,
}

/// Random candidate 5G cells inside `bbox` for one planning scheme.
pub fn random_candidates(bbox: &BoundingBox, n: usize, rng: &mut impl Rng) -> Result<Vec<CellInventoryEntry>> {
    let models: Vec<_> = antenna_catalog()
        .into_iter()
        .filter(|m| m.technology == Technology::Nr5g)
        .collect();
    (0..n)
        .map(|i| {
            let m = &models[rng.gen_range(0..models.len())];
            Ok(CellInventoryEntry {
                cell_id: format!("candidate-{i:05}"),
                site_id: format!("candidate-{i:05}"),
                position: GeoPoint::new(
                    rng.gen_range(bbox.min_lat..=bbox.max_lat),
                    rng.gen_range(bbox.min_lon..=bbox.max_lon),
                )?,
                azimuth: Azimuth::degrees(rng.gen_range(0.0..360.0)),
                technology: Technology::Nr5g,
                manufacturer: m.manufacturer.clone(),
                antenna_model: m.name.clone(),
            })
        })
        .collect()
}

/// Times subgraph construction plus prediction for `n_schemes × n_candidates`
/// candidates on the latest KPI date, one at a time on the calling thread.
pub fn bench_planning(ck: &Checkpoint, region: &RegionData, bbox: &BoundingBox, cfg: &BenchConfig) -> Result<BenchReport> {
    bbox.validate()?;
    let index = SpatialIndex::build(&region.inventory)?;
    let date = region.kpis.dates().into_iter().next_back().ok_or(Error::EmptyTrainingSet)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut times = Vec::with_capacity(cfg.n_candidates * cfg.n_schemes);
    let mut low_confidence = 0;
    let started = Instant::now();
    for _ in 0..cfg.n_schemes {
        let candidates = random_candidates(bbox, cfg.n_candidates, &mut rng)?;
        for c in &candidates {
            let t0 = Instant::now();
            let template = SubgraphTemplate::build(&index, c, &ck.graph)?;
            let g = template.instantiate(&index, date, &region.kpis, &ck.normalization, &ck.vocabulary, &ck.graph);
            let p = ck.predict(&g)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            low_confidence += usize::from(g.low_confidence);
            std::hint::black_box(p);
        }
    }
    let total_seconds = started.elapsed().as_secs_f64();
    let mean_ms = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BenchReport {
        model: ck.kind(),
        kpi: ck.kpi,
        predictions: times.len(),
        total_seconds,
        mean_ms,
        p50_ms: quantile(&sorted, 0.50),
        p95_ms: quantile(&sorted, 0.95),
        p99_ms: quantile(&sorted, 0.99),
        low_confidence,
    })
}

/// Region data for `cfg.scenario`, generated in memory.
pub fn scenario_region(cfg: &ScenarioConfig) -> Result<(Scenario, RegionData)> {
    let s = Scenario::generate(cfg)?;
    let r = RegionData::from_scenario(&s);
    Ok((s, r))
}
