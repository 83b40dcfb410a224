//! `radioplan`: experiment harness and what-if planner front end.
//!
//! Every subcommand prints a JSON document on stdout and a short summary on
//! stderr. Exit status is 0 on success, 1 for usage or validation errors and
//! 2 for runtime failures.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radioplan_core::checkpoint::{Checkpoint, ModelKind};
use radioplan_core::data::Kpi;
use radioplan_core::harness::{
    bench_planning, evaluate_checkpoint, generalization_report, prepare_transfer, run_training_with, write_sample_csv,
    BenchConfig, EpochProgress, ExperimentConfig, RegionData,
};
use radioplan_core::planner::WhatIfRequest;
use radioplan_core::synth::{BoundingBox, Scenario};
use radioplan_service::ServiceConfig;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "radioplan", version, about = "What-if KPI prediction for candidate 5G cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic region and write inventory.csv, kpi.csv and scenario.json.
    Generate(GenerateArgs),
    /// Train one model for one KPI; writes checkpoint, report, samples and timing.
    Train(TrainArgs),
    /// Score a checkpoint on the test dates of a region.
    Evaluate(EvaluateArgs),
    /// Train on region A and score on a shifted region B.
    Generalize(GeneralizeArgs),
    /// Time single-threaded subgraph construction plus prediction.
    Bench(BenchArgs),
    /// Predict the three KPIs of candidate cells from a JSON request file.
    Predict(PredictArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (JSON with scenario, split, model, hyperparams, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` (training) and `scenario.seed` (generation).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value = "dl_throughput")]
    kpi: Kpi,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides `scenario.region_kpi_scale`.
    #[arg(long)]
    kpi_scale: Option<f64>,
    /// Generate the disjoint second region instead, with this layout seed.
    #[arg(long)]
    shift_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Directory written by `generate`; the config's scenario is generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Writes report.json and samples.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GeneralizeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Region B data; otherwise generated from the config with --region-b-seed and --kpi-scale.
    #[arg(long)]
    region_b: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    kpi_scale: f64,
    #[arg(long, default_value_t = 1001)]
    region_b_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 8000)]
    candidates: usize,
    #[arg(long, default_value_t = 10)]
    schemes: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// One checkpoint per KPI.
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// A single request object or an array of requests.
    #[arg(long)]
    request: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

/// Exit-status classes.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<radioplan_core::Error> for Failure {
    fn from(e: radioplan_core::Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Generalize(a) => generalize(a),
        Command::Bench(a) => bench(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Invalid(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.scenario.seed = seed;
    }
    Ok(cfg)
}

fn apply_model_args(cfg: &mut ExperimentConfig, m: &ModelArgs) -> CliResult {
    if let Some(kind) = m.model {
        cfg.model.kind = kind;
    }
    if let Some(e) = m.epochs {
        cfg.hyperparams.max_epochs = e;
    }
    if let Some(lr) = m.learning_rate {
        cfg.hyperparams.learning_rate = lr;
    }
    if let Some(b) = m.batch_size {
        cfg.hyperparams.batch_size = b;
    }
    cfg.hyperparams.validate()?;
    cfg.model.graph.validate()?;
    Ok(())
}

fn load_region(data: Option<&Path>, cfg: &ExperimentConfig) -> CliResult<RegionData> {
    match data {
        Some(dir) => Ok(RegionData::load(dir)?),
        None => {
            cfg.scenario.validate()?;
            Ok(RegionData::from_scenario(&Scenario::generate(&cfg.scenario)?))
        }
    }
}

fn json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn emit<T: Serialize>(value: &T) -> CliResult {
    let mut out = std::io::stdout().lock();
    out.write_all(json(value)?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn write_samples(path: &Path, rows: &[radioplan_core::harness::SampleResult]) -> CliResult {
    let f = std::io::BufWriter::new(fs::File::create(path)?);
    write_sample_csv(rows, f)?;
    Ok(())
}

#[derive(Serialize)]
struct GenerateReport {
    out: PathBuf,
    seed: u64,
    cells_4g: usize,
    cells_5g: usize,
    days: usize,
    kpi_records: usize,
}

fn generate(a: GenerateArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.shift_seed {
        cfg.scenario = cfg.scenario.shifted_region(seed, cfg.scenario.region_kpi_scale);
    }
    if let Some(s) = a.kpi_scale {
        cfg.scenario.region_kpi_scale = s;
    }
    cfg.scenario.validate()?;
    let s = Scenario::generate(&cfg.scenario)?;
    s.write(&a.out)?;
    let cells_5g = s
        .inventory
        .iter()
        .filter(|c| c.technology == radioplan_core::data::Technology::Nr5g)
        .count();
    let report = GenerateReport {
        out: a.out.clone(),
        seed: cfg.scenario.seed,
        cells_4g: s.inventory.len() - cells_5g,
        cells_5g,
        days: s.kpis.dates().len(),
        kpi_records: s.kpis.len(),
    };
    eprintln!(
        "generated {} 4G and {} 5G cells over {} days into {}",
        report.cells_4g,
        report.cells_5g,
        report.days,
        a.out.display()
    );
    emit(&report)
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?;
    apply_model_args(&mut cfg, &a.model)?;
    let region = load_region(a.data.as_deref(), &cfg)?;
    let out = run_training_with(&region, &cfg, a.model.kpi, &mut print_progress)?;
    fs::create_dir_all(&a.out)?;
    out.checkpoint.save(&a.out.join("checkpoint.json"))?;
    fs::write(a.out.join("report.json"), json(&out.report)?)?;
    fs::write(a.out.join("timing.json"), json(&out.timing)?)?;
    write_samples(&a.out.join("samples.csv"), &out.samples)?;
    eprintln!(
        "{} {}: test MAPE {:.2}% over {} samples ({} excluded), best epoch {} of {}, {:.1}s",
        cfg.model.kind.name(),
        a.model.kpi.name(),
        out.report.test.mape,
        out.report.test.scored_samples,
        out.report.test.excluded_samples,
        out.report.training.best_epoch,
        out.report.training.epochs_run,
        out.timing.train_seconds
    );
    emit(&out.report)
}

fn print_progress(p: EpochProgress) {
    eprintln!("epoch {:>3}  train loss {:.5}  val MAPE {:.2}%", p.epoch, p.train_loss, p.val_mape);
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let cfg = load_config(&a.config)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let region = load_region(a.data.as_deref(), &cfg)?;
    let (_, data) = prepare_transfer(&ck, &region, &cfg.split)?;
    let (report, rows) = evaluate_checkpoint(&ck, &data.test)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), json(&report)?)?;
        write_samples(&dir.join("samples.csv"), &rows)?;
    }
    eprintln!(
        "{} {}: MAPE {:.2}% over {} samples",
        ck.kind().name(),
        ck.kpi.name(),
        report.mape,
        report.scored_samples
    );
    emit(&report)
}

fn generalize(a: GeneralizeArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?;
    apply_model_args(&mut cfg, &a.model)?;
    let region_a = load_region(a.data.as_deref(), &cfg)?;
    let region_b = match &a.region_b {
        Some(dir) => RegionData::load(dir)?,
        None => {
            let b = cfg.scenario.shifted_region(a.region_b_seed, a.kpi_scale);
            b.validate()?;
            RegionData::from_scenario(&Scenario::generate(&b)?)
        }
    };
    let trained = run_training_with(&region_a, &cfg, a.model.kpi, &mut print_progress)?;
    let (_, data_b) = prepare_transfer(&trained.checkpoint, &region_b, &cfg.split)?;
    let (report_b, rows_b) = evaluate_checkpoint(&trained.checkpoint, &data_b.test)?;
    let report = generalization_report(trained.report.test.clone(), report_b, cfg.seed);
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        trained.checkpoint.save(&dir.join("checkpoint.json"))?;
        fs::write(dir.join("report.json"), json(&report)?)?;
        write_samples(&dir.join("samples_a.csv"), &trained.samples)?;
        write_samples(&dir.join("samples_b.csv"), &rows_b)?;
    }
    eprintln!(
        "{} {}: region A {:.2}%, region B {:.2}%, gap {:+.2} pp",
        cfg.model.kind.name(),
        a.model.kpi.name(),
        report.region_a.mape,
        report.region_b.mape,
        report.gap
    );
    emit(&report)
}

fn bench(a: BenchArgs) -> CliResult {
    let cfg = load_config(&a.config)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let region = load_region(a.data.as_deref(), &cfg)?;
    let bbox = match a.data {
        Some(_) => inventory_bbox(&region)?,
        None => cfg.scenario.region_bbox,
    };
    let bc = BenchConfig {
        n_candidates: a.candidates,
        n_schemes: a.schemes,
        seed: cfg.seed,
    };
    let report = bench_planning(&ck, &region, &bbox, &bc)?;
    eprintln!(
        "{} {}: {} predictions in {:.1}s, mean {:.3} ms, p99 {:.3} ms",
        ck.kind().name(),
        ck.kpi.name(),
        report.predictions,
        report.total_seconds,
        report.mean_ms,
        report.p99_ms
    );
    emit(&report)
}

fn inventory_bbox(region: &RegionData) -> CliResult<BoundingBox> {
    let mut b = BoundingBox {
        min_lat: f64::INFINITY,
        min_lon: f64::INFINITY,
        max_lat: f64::NEG_INFINITY,
        max_lon: f64::NEG_INFINITY,
    };
    for c in &region.inventory {
        b.min_lat = b.min_lat.min(c.position.lat());
        b.min_lon = b.min_lon.min(c.position.lon());
        b.max_lat = b.max_lat.max(c.position.lat());
        b.max_lon = b.max_lon.max(c.position.lon());
    }
    b.validate()?;
    Ok(b)
}

fn predict(a: PredictArgs) -> CliResult {
    let text = fs::read_to_string(&a.request)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", a.request.display())))?;
    let single = !value.is_array();
    let requests: Vec<WhatIfRequest> = if single {
        vec![serde_json::from_value(value)]
    } else {
        serde_json::from_value::<Vec<serde_json::Value>>(value)?
            .into_iter()
            .map(serde_json::from_value)
            .collect()
    }
    .into_iter()
    .collect::<Result<_, _>>()
    .map_err(|e| Failure::Invalid(format!("{}: {e}", a.request.display())))?;
    for (i, r) in requests.iter().enumerate() {
        if let Some(f) = r.field_errors().first() {
            return Err(Failure::Invalid(format!("request {i}: {}: {}", f.field, f.message)));
        }
    }
    let planner = radioplan_service::load_planner(&a.data, &a.checkpoints)?;
    let responses = requests
        .iter()
        .map(|r| planner.predict(r))
        .collect::<Result<Vec<_>, _>>()?;
    eprintln!("{} prediction(s) with {}", responses.len(), planner.model_version());
    if single {
        emit(&responses[0])
    } else {
        emit(&responses)
    }
}

fn serve(a: ServeArgs) -> CliResult {
    let cfg = ServiceConfig {
        data_dir: a.data,
        checkpoints: a.checkpoints,
        bind: a.bind,
    };
    radioplan_service::run(&cfg, |addr| {
        eprintln!("listening on http://{addr}");
    })
    .map_err(|e| match e.downcast::<radioplan_core::Error>() {
        Ok(core) => Failure::from(*core),
        Err(other) => Failure::Runtime(other.to_string()),
    })
}
