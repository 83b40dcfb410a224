//! End-to-end acceptance suite. Prints one `PASS`/`FAIL` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The long-running criteria (learnability, generalization, benchmark, parity)
//! drive the `radioplan` binary on the default synthetic scenario.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use radioplan_core::data::{
    encode_node, fit_normalization, CellInventoryEntry, Kpi, KpiRecord, KpiTable, NormalizationSpec, Technology,
    Vocabulary,
};
use radioplan_core::geometry::{
    fold_angle, geodesic_distance, initial_bearing, relative_angles, Azimuth, EdgeGeometry, GeoPoint,
    CO_LOCATION_THRESHOLD_M,
};
use radioplan_core::gnn::{self, GnnHyperparams, GnnParameters};
use radioplan_core::graph::{
    build_subgraph, GraphBuildConfig, GraphEdge, GraphNode, PlanningSubgraph, SpatialIndex,
};
use radioplan_core::harness::SplitSpec;
use radioplan_core::mlr::{self, MlrLayout, DEFAULT_RIDGE_LAMBDA};
use radioplan_core::numeric::grad_check;
use radioplan_core::synth::{noise_floor, Scenario, ScenarioConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<(bool, String), String>;

// ---------------------------------------------------------------- geometry

fn geometry_oracle() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/geodesic_oracle.csv");
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let a = GeoPoint::new(v[0], v[1]).map_err(|e| e.to_string())?;
        let b = GeoPoint::new(v[2], v[3]).map_err(|e| e.to_string())?;
        if v[4] <= 100.0 {
            continue;
        }
        worst = worst.max((geodesic_distance(a, b) - v[4]).abs() / v[4]);
        pairs += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = Vec::new();
    let checks = 10_000;
    for i in 0..checks {
        let a = GeoPoint::new(rng.gen_range(-80.0..80.0), rng.gen_range(-180.0..180.0)).unwrap();
        let b = a.destination(rng.gen_range(0.0..360.0), rng.gen_range(0.0..3000.0));
        let az = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.1) {
                Azimuth::omni()
            } else {
                Azimuth::degrees(rng.gen_range(-720.0..720.0))
            }
        };
        let (az_a, az_b) = (az(&mut rng), az(&mut rng));
        let f = relative_angles(a, az_a, b, az_b);
        let r = relative_angles(b, az_b, a, az_a);
        let valid = !az_a.is_omni() && !az_b.is_omni() && f.d >= CO_LOCATION_THRESHOLD_M;
        let in_range = [f.alpha, f.theta, f.rho].iter().all(|x| (0.0..=180.0).contains(x));
        let masked_ok = valid || (f.alpha, f.theta, f.rho) == (0.0, 0.0, 0.0);
        let swap_ok = (f.alpha - r.theta).abs() < 1e-9 && (f.theta - r.alpha).abs() < 1e-9 && (f.rho - r.rho).abs() < 1e-9;
        let sym_ok = (f.d - r.d).abs() <= 1e-9 * f.d.max(1.0);
        let fold = fold_angle(rng.gen_range(-1e4..1e4));
        let ok = f.angles_valid == valid
            && in_range
            && masked_ok
            && swap_ok
            && sym_ok
            && (0.0..=180.0).contains(&fold)
            && (!valid || initial_bearing(a, b).is_ok());
        if !ok && violations.len() < 3 {
            violations.push(i);
        }
    }
    let pass = pairs == 1000 && worst <= 1e-3 && violations.is_empty();
    Ok((
        pass,
        format!(
            "max relative distance error {worst:.2e} over {pairs} pairs (tol 1e-3); \
             {checks} angle property checks, violations at {violations:?}"
        ),
    ))
}

// ---------------------------------------------------------------- graph build

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 10, 3).unwrap()
}

fn random_inventory(rng: &mut ChaCha8Rng, n: usize, centre: GeoPoint, spread_m: f64) -> Vec<CellInventoryEntry> {
    let mut cells = Vec::with_capacity(n);
    let mut site = 0;
    while cells.len() < n {
        let pos = centre.destination(rng.gen_range(0.0..360.0), spread_m * rng.gen::<f64>().sqrt());
        let sectors = rng.gen_range(1..=3);
        for s in 0..sectors {
            if cells.len() == n {
                break;
            }
            let tech = if rng.gen_bool(0.1) { Technology::Nr5g } else { Technology::Lte4g };
            cells.push(CellInventoryEntry {
                // ids deliberately not in position order
                cell_id: format!("C{:05}-{s}", (site * 7919) % 100_000),
                site_id: format!("S{site:05}"),
                position: pos,
                azimuth: if rng.gen_bool(0.05) {
                    Azimuth::omni()
                } else {
                    Azimuth::degrees(rng.gen_range(0.0..360.0))
                },
                technology: tech,
                manufacturer: ["Ericsson", "Huawei", "Nokia"][rng.gen_range(0..3)].into(),
                antenna_model: format!("AM{}", rng.gen_range(0..5)),
            });
        }
        site += 1;
    }
    cells
}

fn random_kpis(rng: &mut ChaCha8Rng, cells: &[CellInventoryEntry]) -> KpiTable {
    let present: Vec<&CellInventoryEntry> = cells.iter().filter(|_| rng.gen_bool(0.95)).collect();
    KpiTable::from_records(
        present
            .into_iter()
            .map(|c| KpiRecord {
                cell_id: c.cell_id.clone(),
                date: day(),
                prb_util: rng.gen_range(0.0..100.0),
                ul_throughput: rng.gen_range(0.0..30.0),
                dl_throughput: rng.gen_range(0.0..300.0),
            })
            .collect::<Vec<_>>(),
    )
    .unwrap()
}

/// Straightforward reference: sort every 4G cell by (distance, id), keep k.
fn brute_force_subgraph(
    cells: &[CellInventoryEntry],
    candidate: &CellInventoryEntry,
    kpis: &KpiTable,
    spec: &NormalizationSpec,
    vocab: &Vocabulary,
    cfg: &GraphBuildConfig,
) -> PlanningSubgraph {
    let mut four_g: Vec<(f64, &CellInventoryEntry)> = cells
        .iter()
        .filter(|c| c.technology == Technology::Lte4g)
        .map(|c| (geodesic_distance(candidate.position, c.position), c))
        .collect();
    four_g.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cell_id.cmp(&b.1.cell_id)));
    four_g.truncate(cfg.k);
    let n = four_g.len();
    let geom: Vec<EdgeGeometry> = four_g
        .iter()
        .map(|(_, c)| relative_angles(candidate.position, candidate.azimuth, c.position, c.azimuth))
        .collect();
    let mut linked: Vec<bool> = geom.iter().map(|g| g.d <= cfg.target_radius).collect();
    let low_confidence = !linked.contains(&true);
    if low_confidence {
        linked[0] = true;
    }
    let mut edges = Vec::new();
    for i in 0..n {
        if linked[i] {
            edges.push(GraphEdge {
                src: i + 1,
                dst: 0,
                geometry: geom[i].reversed(),
            });
            edges.push(GraphEdge {
                src: 0,
                dst: i + 1,
                geometry: geom[i],
            });
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (four_g[i].1, four_g[j].1);
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
    let mut nodes = vec![GraphNode {
        cell_id: Arc::from(candidate.cell_id.as_str()),
        features: encode_node(candidate, None, spec, vocab),
        target_geometry: EdgeGeometry {
            d: 0.0,
            alpha: 0.0,
            theta: 0.0,
            rho: 0.0,
            angles_valid: false,
        },
        linked_to_target: false,
    }];
    for (i, (_, c)) in four_g.iter().enumerate() {
        nodes.push(GraphNode {
            cell_id: Arc::from(c.cell_id.as_str()),
            features: encode_node(c, kpis.get(&c.cell_id, day()), spec, vocab),
            target_geometry: geom[i],
            linked_to_target: linked[i],
        });
    }
    PlanningSubgraph {
        nodes,
        edges: edges.into(),
        low_confidence,
    }
}

fn graph_build_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scenarios = 100;
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for s in 0..scenarios {
        // a few regions straddle the antimeridian
        let centre = if s % 10 == 9 {
            GeoPoint::new(rng.gen_range(-60.0..60.0), 179.99).unwrap()
        } else {
            GeoPoint::new(rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0)).unwrap()
        };
        let spread = rng.gen_range(1500.0..8000.0);
        let cells = random_inventory(&mut rng, 2000, centre, spread);
        let kpis = random_kpis(&mut rng, &cells);
        let dates: BTreeSet<NaiveDate> = [day()].into();
        let spec = fit_normalization(&kpis, &dates, "t").map_err(|e| e.to_string())?;
        let vocab = Vocabulary::fit(&cells);
        let index = SpatialIndex::build(&cells).map_err(|e| e.to_string())?;
        for q in 0..20 {
            let position = match q % 4 {
                // on top of an existing cell
                0 => cells[rng.gen_range(0..cells.len())].position,
                // well outside the region
                1 => centre.destination(rng.gen_range(0.0..360.0), spread + rng.gen_range(500.0..20_000.0)),
                _ => centre.destination(rng.gen_range(0.0..360.0), spread * rng.gen::<f64>().sqrt()),
            };
            let candidate = CellInventoryEntry {
                cell_id: "candidate".into(),
                site_id: "candidate".into(),
                position,
                azimuth: if q % 7 == 3 {
                    Azimuth::omni()
                } else {
                    Azimuth::degrees(rng.gen_range(0.0..360.0))
                },
                technology: Technology::Nr5g,
                manufacturer: "Ericsson".into(),
                antenna_model: "AM2".into(),
            };
            let cfg = GraphBuildConfig {
                k: [1, 5, 50, 50, 120][q % 5],
                ..Default::default()
            };
            let got = build_subgraph(&index, &candidate, day(), &kpis, &spec, &vocab, &cfg).map_err(|e| e.to_string())?;
            let want = brute_force_subgraph(&cells, &candidate, &kpis, &spec, &vocab, &cfg);
            if format!("{got:?}") != format!("{want:?}") && mismatches.len() < 3 {
                mismatches.push((s, q));
            }
            compared += 1;
        }
    }
    Ok((
        mismatches.is_empty(),
        format!("{compared} subgraphs over {scenarios} scenarios of 2000 cells byte-identical to brute force; mismatches {mismatches:?}"),
    ))
}

// ---------------------------------------------------------------- GNN numerics

fn world_subgraph(rng: &mut ChaCha8Rng, k: usize) -> (PlanningSubgraph, usize) {
    let centre = GeoPoint::new(51.51, -0.09).unwrap();
    let cells = random_inventory(rng, 300, centre, 1200.0);
    let kpis = random_kpis(rng, &cells);
    let dates: BTreeSet<NaiveDate> = [day()].into();
    let spec = fit_normalization(&kpis, &dates, "t").unwrap();
    let vocab = Vocabulary::fit(&cells);
    let index = SpatialIndex::build(&cells).unwrap();
    let candidate = CellInventoryEntry {
        cell_id: "candidate".into(),
        site_id: "candidate".into(),
        position: centre.destination(rng.gen_range(0.0..360.0), rng.gen_range(0.0..800.0)),
        azimuth: Azimuth::degrees(rng.gen_range(0.0..360.0)),
        technology: Technology::Nr5g,
        manufacturer: "Nokia".into(),
        antenna_model: "AM1".into(),
    };
    let cfg = GraphBuildConfig {
        k,
        ..Default::default()
    };
    let g = build_subgraph(&index, &candidate, day(), &kpis, &spec, &vocab, &cfg).unwrap();
    (g, vocab.node_dim())
}

/// Default-shaped parameters with every entry jittered, so biases are not all zero,
/// and a non-trivial output scaling.
fn jittered_params(rng: &mut ChaCha8Rng, node_dim: usize, seed: u64) -> GnnParameters {
    let mut p = gnn::init_params(&GnnHyperparams::default(), node_dim, seed).unwrap();
    for v in p.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    p.output = gnn::OutputScaling {
        shift: rng.gen_range(-1.0..1.0),
        scale: rng.gen_range(0.05..2.0),
    };
    p
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for i in 0..20 {
        let k = rng.gen_range(2..=6);
        let (g, node_dim) = world_subgraph(&mut rng, k);
        let p = jittered_params(&mut rng, node_dim, i);
        assert_eq!(p.hyper.iterations, 2);
        let label = rng.gen_range(-1.0..1.0);
        let (_, grads) = gnn::loss_and_grad(&p, &g, label).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = p.iter().copied().collect();
        let analytic: Vec<f64> = grads.iter().copied().collect();
        let mut work = p.clone();
        let report = grad_check(
            |v: &[f64]| {
                for (d, s) in work.iter_mut().zip(v) {
                    *d = *s;
                }
                gnn::probe(&work, &g, label).unwrap()
            },
            &flat,
            &analytic,
            1e-5,
        );
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        skipped += report.skipped_kinks;
    }
    Ok((
        worst <= 1e-4 && checked > 0,
        format!(
            "max relative error {worst:.2e} (tol 1e-4, eps 1e-5, denominators floored at 1e-6 x max|grad|) \
             over 20 subgraphs, T=2, hidden 32; {checked} parameters checked, {skipped} skipped at ReLU kinks"
        ),
    ))
}

fn permuted(g: &PlanningSubgraph, rng: &mut ChaCha8Rng) -> PlanningSubgraph {
    let n = g.nodes.len();
    let mut perm: Vec<usize> = (1..n).collect();
    perm.shuffle(rng);
    let mut new_index = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        new_index[old] = new + 1;
    }
    let mut nodes = vec![g.nodes[0].clone()];
    nodes.extend(perm.iter().map(|&old| g.nodes[old].clone()));
    let mut edges: Vec<GraphEdge> = g
        .edges
        .iter()
        .map(|e| GraphEdge {
            src: new_index[e.src],
            dst: new_index[e.dst],
            geometry: e.geometry,
        })
        .collect();
    edges.shuffle(rng);
    PlanningSubgraph {
        nodes,
        edges: edges.into(),
        low_confidence: g.low_confidence,
    }
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let graphs = 10;
    for i in 0..graphs {
        let (g, node_dim) = world_subgraph(&mut rng, 50);
        let p = jittered_params(&mut rng, node_dim, 100 + i);
        let y = gnn::forward(&p, &g).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let z = gnn::forward(&p, &permuted(&g, &mut rng)).map_err(|e| e.to_string())?;
            worst = worst.max((z - y).abs() / y.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok((
        worst <= 1e-9,
        format!("max relative change {worst:.2e} (tol 1e-9) over {graphs} subgraphs x 100 node/edge permutations"),
    ))
}

fn mlr_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 60;
    let beta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let b0 = 1.25;
    let samples: Vec<(Vec<f64>, f64)> = (0..600)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = b0 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            (x, y)
        })
        .collect();
    let layout = MlrLayout {
        k: 1,
        node_dim: dim,
        include_geometry: false,
        distance_scale: 500.0,
    };
    let p = mlr::fit(&samples, DEFAULT_RIDGE_LAMBDA, layout).map_err(|e| e.to_string())?;
    let coef_err = p
        .weights
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a - b).abs())
        .fold((p.bias - b0).abs(), f64::max);
    let residual = mlr::optimality_residual(&p, &samples).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((
        coef_err <= 1e-5 && residual <= 1e-8,
        format!(
            "max coefficient error {coef_err:.2e} (tol 1e-5), normal-equation residual {residual:.2e} (tol 1e-8), \
             {dim} features, 600 samples, ridge {DEFAULT_RIDGE_LAMBDA:e}"
        ),
    ))
}

// ---------------------------------------------------------------- CLI pipeline

struct Cli;

impl Cli {
    fn cmd() -> Command {
        Command::new(env!("CARGO_BIN_EXE_radioplan"))
    }

    /// Runs to completion; returns stdout.
    fn run(args: &[&str]) -> Result<Vec<u8>, String> {
        let out = Self::cmd().args(args).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "radioplan {} exited with {:?}: {}",
                args.join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(out.stdout)
    }

    fn json(args: &[&str]) -> Result<Value, String> {
        serde_json::from_slice(&Self::run(args)?).map_err(|e| e.to_string())
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn mape(report: &Value) -> Result<f64, String> {
    report["mape"].as_f64().ok_or_else(|| format!("no mape in {report}"))
}

struct Pipeline {
    dir: PathBuf,
    region_a: PathBuf,
    region_b: PathBuf,
}

impl Pipeline {
    fn checkpoint(&self, model: &str, kpi: Kpi) -> PathBuf {
        self.dir.join(format!("{model}-{}", kpi.name())).join("checkpoint.json")
    }

    fn train_report(&self, model: &str, kpi: Kpi) -> Result<Value, String> {
        let path = self.dir.join(format!("{model}-{}", kpi.name())).join("report.json");
        serde_json::from_slice(&fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?).map_err(|e| e.to_string())
    }

    fn train(&self, model: &str, kpi: Kpi) -> Result<Value, String> {
        let out = self.dir.join(format!("{model}-{}", kpi.name()));
        Cli::json(&["train", "--model", model, "--kpi", kpi.name(), "--data", p(&self.region_a), "--out", p(&out)])
    }
}

fn determinism(pl: &Pipeline) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    // generate
    let mut gen = Vec::new();
    for run in ["gen1", "gen2"] {
        let out = pl.dir.join(run);
        let stdout = Cli::run(&["generate", "--out", p(&out)])?;
        let files: Vec<Vec<u8>> = ["inventory.csv", "kpi.csv", "scenario.json"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap_or_default())
            .collect();
        // the reported output path differs by construction
        let mut report: Value = serde_json::from_slice(&stdout).map_err(|e| e.to_string())?;
        report["out"] = Value::Null;
        gen.push((report, files));
    }
    let same = gen[0] == gen[1];
    ok &= same;
    notes.push(format!("generate {}", if same { "identical" } else { "DIFFERS" }));

    // train (GNN shortened, MLR full) and evaluate
    for (model, extra) in [("gnn", vec!["--epochs", "3"]), ("mlr", vec![])] {
        let mut runs = Vec::new();
        for run in ["a", "b"] {
            let out = pl.dir.join(format!("det-{model}-{run}"));
            let mut args = vec!["train", "--model", model, "--kpi", "ul_throughput", "--data", p(&pl.region_a), "--out", p(&out)];
            args.extend(extra.iter().copied());
            let stdout = Cli::run(&args)?;
            let files: Vec<Vec<u8>> = ["report.json", "checkpoint.json", "samples.csv"]
                .iter()
                .map(|f| fs::read(out.join(f)).unwrap_or_default())
                .collect();
            let eval = Cli::run(&["evaluate", "--checkpoint", p(&out.join("checkpoint.json")), "--data", p(&pl.region_a)])?;
            runs.push((stdout, files, eval));
        }
        let same = runs[0] == runs[1];
        ok &= same;
        notes.push(format!("{model} train+evaluate {}", if same { "identical" } else { "DIFFERS" }));
    }
    Ok((ok, notes.join(", ")))
}

fn learnability(pl: &Pipeline) -> Outcome {
    let scenario = Scenario::generate(&ScenarioConfig::default()).map_err(|e| e.to_string())?;
    let split = SplitSpec::temporal(&scenario.kpis.dates(), &Default::default()).map_err(|e| e.to_string())?;
    let test_dates: Vec<NaiveDate> = split.test_dates.iter().copied().collect();
    let floor = noise_floor(&scenario.field, &scenario.inventory, &test_dates, 50_000, 17);
    let started = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for kpi in Kpi::ALL {
        let report = pl.train("gnn", kpi)?;
        let m = mape(&report["test"])?;
        let f = floor[kpi.index()];
        let pass = m <= f + 5.0 && m <= 20.0;
        ok &= pass;
        parts.push(format!("{} {m:.2}% (floor {f:.2}%, limit {:.2}%)", kpi.name(), (f + 5.0).min(20.0)));
    }
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let in_time = minutes <= 15.0;
    Ok((
        ok && in_time,
        format!("GNN test MAPE {}; training wall-clock {minutes:.1} min (limit 15)", parts.join(", ")),
    ))
}

fn generalization(pl: &Pipeline) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for kpi in Kpi::ALL {
        pl.train("mlr", kpi)?;
        let mut gaps = [0.0; 2];
        for (i, model) in ["gnn", "mlr"].into_iter().enumerate() {
            let a = mape(&pl.train_report(model, kpi)?["test"])?;
            let b = mape(&Cli::json(&["evaluate", "--checkpoint", p(&pl.checkpoint(model, kpi)), "--data", p(&pl.region_b)])?)?;
            gaps[i] = b - a;
        }
        let pass = gaps[0] < gaps[1] && gaps[1] > 10.0;
        ok &= pass;
        parts.push(format!("{} gap GNN {:+.1} pp vs MLR {:+.1} pp", kpi.name(), gaps[0], gaps[1]));
    }
    Ok((ok, format!("region-B KPI scale 1.5: {}", parts.join("; "))))
}

fn bench(pl: &Pipeline) -> Outcome {
    let started = Instant::now();
    let mut means = Vec::new();
    let mut parts = Vec::new();
    for model in ["gnn", "mlr"] {
        let r = Cli::json(&["bench", "--checkpoint", p(&pl.checkpoint(model, Kpi::DlThroughput)), "--data", p(&pl.region_a)])?;
        let mean = r["mean_ms"].as_f64().ok_or("no mean_ms")?;
        let n = r["predictions"].as_u64().unwrap_or(0);
        parts.push(format!("{model} {n} predictions mean {mean:.3} ms p99 {:.3} ms", r["p99_ms"].as_f64().unwrap_or(f64::NAN)));
        if n != 80_000 {
            return Ok((false, format!("{model} ran {n} predictions instead of 80000")));
        }
        means.push(mean);
    }
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    Ok((
        means[0] <= 20.0 && means[1] < means[0] && minutes <= 30.0,
        format!("{}; GNN limit 20 ms, MLR must be faster; {minutes:.1} min", parts.join(", ")),
    ))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http_post(addr: SocketAddr, path: &str, body: &str) -> Result<(u16, String), String> {
    let mut s = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(Duration::from_secs(30))).map_err(|e| e.to_string())?;
    write!(
        s,
        "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .map_err(|e| e.to_string())?;
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).map_err(|e| e.to_string())?;
    let text = String::from_utf8(raw).map_err(|e| e.to_string())?;
    let (head, body) = text.split_once("\r\n\r\n").ok_or("malformed response")?;
    let status = head
        .split_whitespace()
        .nth(1)
        .and_then(|c| c.parse().ok())
        .ok_or("missing status")?;
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    Ok((status, if chunked { dechunk(body)? } else { body.to_string() }))
}

fn dechunk(mut body: &str) -> Result<String, String> {
    let mut out = String::new();
    loop {
        let (size, rest) = body.split_once("\r\n").ok_or("bad chunk")?;
        let n = usize::from_str_radix(size.trim(), 16).map_err(|e| e.to_string())?;
        if n == 0 {
            return Ok(out);
        }
        out.push_str(&rest[..n]);
        body = &rest[n + 2..];
    }
}

fn parity(pl: &Pipeline) -> Outcome {
    let inventory = radioplan_core::data::load_inventory(pl.region_a.join("inventory.csv")).map_err(|e| e.to_string())?;
    let lat: Vec<f64> = inventory.iter().map(|c| c.position.lat()).collect();
    let lon: Vec<f64> = inventory.iter().map(|c| c.position.lon()).collect();
    let (lat0, lat1) = (lat.iter().copied().fold(f64::MAX, f64::min), lat.iter().copied().fold(f64::MIN, f64::max));
    let (lon0, lon1) = (lon.iter().copied().fold(f64::MAX, f64::min), lon.iter().copied().fold(f64::MIN, f64::max));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let requests: Vec<Value> = (0..50)
        .map(|i| {
            let like = &inventory[rng.gen_range(0..inventory.len())];
            let mut r = serde_json::json!({
                "lat": rng.gen_range(lat0..lat1),
                "lon": rng.gen_range(lon0..lon1),
                "manufacturer": like.manufacturer,
                "antenna_model": like.antenna_model,
            });
            if i % 10 == 7 {
                r["is_omni"] = true.into();
            } else {
                r["azimuth_deg"] = rng.gen_range(0.0..360.0).into();
            }
            r
        })
        .collect();
    let req_path = pl.dir.join("parity-requests.json");
    fs::write(&req_path, serde_json::to_string(&requests).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let checkpoints: Vec<PathBuf> = Kpi::ALL.iter().map(|&k| pl.checkpoint("gnn", k)).collect();
    let mut args = vec!["predict".to_string(), "--data".into(), p(&pl.region_a).into(), "--request".into(), p(&req_path).into()];
    let mut serve_args = vec!["serve".to_string(), "--data".into(), p(&pl.region_a).into(), "--bind".into(), "127.0.0.1:0".into()];
    for c in &checkpoints {
        args.extend(["--checkpoint".to_string(), p(c).into()]);
        serve_args.extend(["--checkpoint".to_string(), p(c).into()]);
    }
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let cli: Vec<Value> = serde_json::from_value(Cli::json(&arg_refs)?).map_err(|e| e.to_string())?;

    let mut child = Cli::cmd()
        .args(&serve_args)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let stderr = child.stderr.take().ok_or("no stderr")?;
    let server = Server(child);
    let mut line = String::new();
    BufReader::new(stderr).read_line(&mut line).map_err(|e| e.to_string())?;
    let addr: SocketAddr = line
        .trim()
        .strip_prefix("listening on http://")
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| format!("unexpected server output {line:?}"))?;

    let mut mismatches = Vec::new();
    for (i, (req, want)) in requests.iter().zip(&cli).enumerate() {
        let (status, body) = http_post(addr, "/predict", &req.to_string())?;
        if status != 200 {
            return Ok((false, format!("request {i}: HTTP {status}: {body}")));
        }
        let got: Value = serde_json::from_str(&body).map_err(|e| e.to_string())?;
        for key in ["prb_util_pct", "ul_thr_mbps", "dl_thr_mbps"] {
            let (a, b) = (got[key].as_f64(), want[key].as_f64());
            if a.map(f64::to_bits) != b.map(f64::to_bits) || a.is_none() {
                mismatches.push(format!("{i}.{key}: {a:?} vs {b:?}"));
            }
        }
    }
    drop(server);
    Ok((
        mismatches.is_empty() && cli.len() == 50,
        format!("{} candidates, CLI vs POST /predict bit-equal on all three KPIs; mismatches {mismatches:?}", cli.len()),
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let pipeline = Pipeline {
        dir: dir.path().to_path_buf(),
        region_a: dir.path().join("region-a"),
        region_b: dir.path().join("region-b"),
    };
    let setup = Cli::run(&["generate", "--out", p(&pipeline.region_a)]).and_then(|_| {
        Cli::run(&["generate", "--shift-seed", "1001", "--kpi-scale", "1.5", "--out", p(&pipeline.region_b)])
    });

    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        print_line(name, &outcome, secs);
        results.push((name, outcome, secs));
    };
    run("geometry_oracle", &geometry_oracle);
    run("graph_build_oracle", &graph_build_oracle);
    run("gradient_correctness", &gradient_check);
    run("permutation_invariance", &permutation_invariance);
    run("mlr_exactness", &mlr_exactness);
    match &setup {
        Ok(_) => {
            run("learnability", &|| learnability(&pipeline));
            run("generalization_ordering", &|| generalization(&pipeline));
            run("planning_benchmark", &|| bench(&pipeline));
            run("determinism", &|| determinism(&pipeline));
            run("cli_service_parity", &|| parity(&pipeline));
        }
        Err(e) => {
            for name in [
                "learnability",
                "generalization_ordering",
                "planning_benchmark",
                "determinism",
                "cli_service_parity",
            ] {
                run(name, &|| Err(format!("scenario generation failed: {e}")));
            }
        }
    }

    let failed = results.iter().filter(|(_, o, _)| !matches!(o, Ok((true, _)))).count();
    let mut summary = String::new();
    let _ = write!(summary, "acceptance: {} passed, {failed} failed", results.len() - failed);
    println!("{summary}");
    if failed > 0 {
        std::process::exit(1);
    }
}

fn print_line(name: &str, outcome: &Outcome, secs: f64) {
    let (tag, detail) = match outcome {
        Ok((true, d)) => ("PASS", d.clone()),
        Ok((false, d)) => ("FAIL", d.clone()),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    println!("{tag} {name}: {detail} [{secs:.1}s]");
    let _ = std::io::stdout().flush();
}
