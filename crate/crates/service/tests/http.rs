use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::NaiveDate;
use http_body_util::BodyExt;
use radioplan_core::checkpoint::ModelKind;
use radioplan_core::data::Kpi;
use radioplan_core::graph::GraphBuildConfig;
use radioplan_core::harness::{run_training, scenario_region, ExperimentConfig, ModelConfig};
use radioplan_core::planner::{CellsResponse, Planner, WhatIfRequest, WhatIfResponse};
use radioplan_core::synth::ScenarioConfig;
use radioplan_service::{router, ErrorBody, Health};
use serde_json::{json, Value};
use tower::ServiceExt;

fn planner() -> Arc<Planner> {
    static P: OnceLock<Arc<Planner>> = OnceLock::new();
    P.get_or_init(|| {
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
        Arc::new(Planner::new(region.inventory, region.kpis, models).unwrap())
    })
    .clone()
}

fn valid_request(p: &Planner) -> Value {
    let c = &p.inventory()[3];
    json!({
        "lat": c.position.lat() + 0.0004,
        "lon": c.position.lon(),
        "azimuth_deg": 45.0,
        "manufacturer": c.manufacturer,
        "antenna_model": c.antenna_model,
    })
}

async fn call(req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(planner()).oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get(uri: &str) -> (StatusCode, Vec<u8>) {
    call(Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    call(
        Request::post("/predict")
            .header("content-type", "application/json")
            .body(body.into())
            .unwrap(),
    )
    .await
}

fn error(body: &[u8]) -> ErrorBody {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn health_reports_model_version() {
    let (status, body) = get("/health").await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.model_version, planner().model_version());
    assert_eq!(h.cells, planner().inventory().len());
}

#[tokio::test]
async fn predict_matches_planner() {
    let p = planner();
    let req = valid_request(&p);
    let (status, body) = post(req.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let got: WhatIfResponse = serde_json::from_slice(&body).unwrap();
    let direct = p.predict(&serde_json::from_value::<WhatIfRequest>(req).unwrap()).unwrap();
    assert_eq!(got, direct);
    assert!(!got.neighbors.is_empty());
}

#[tokio::test]
async fn invalid_latitude_is_a_field_error() {
    let mut req = valid_request(&planner());
    req["lat"] = json!(95.0);
    let (status, body) = post(req.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let e = error(&body);
    assert_eq!(e.code, "invalid_request");
    assert_eq!(e.fields.unwrap()[0].field, "lat");
}

#[tokio::test]
async fn missing_azimuth_needs_omni() {
    let mut req = valid_request(&planner());
    req.as_object_mut().unwrap().remove("azimuth_deg");
    let (status, body) = post(req.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(&body).fields.unwrap()[0].field, "azimuth_deg");

    req["is_omni"] = json!(true);
    let (status, _) = post(req.to_string()).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    for body in ["", "{", "[]", r#"{"lat": "north"}"#] {
        let (status, b) = post(body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(error(&b).code, "invalid_json");
    }
    let mut req = valid_request(&planner());
    req["power_dbm"] = json!(40);
    let (status, _) = post(req.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_date_is_rejected() {
    let mut req = valid_request(&planner());
    req["date"] = json!("2031-01-01");
    let (status, body) = post(req.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(&body).fields.unwrap()[0].field, "date");
}

#[tokio::test]
async fn cells_in_bbox() {
    let p = planner();
    let c = &p.inventory()[0];
    let (lat, lon) = (c.position.lat(), c.position.lon());
    let uri = format!("/cells?bbox={},{},{},{}", lat - 0.01, lon - 0.01, lat + 0.01, lon + 0.01);
    let (status, body) = get(&uri).await;
    assert_eq!(status, StatusCode::OK);
    let r: CellsResponse = serde_json::from_slice(&body).unwrap();
    assert!(r.cells.iter().any(|x| x.cell_id == c.cell_id));
    assert!(r.cells.windows(2).all(|w| w[0].cell_id < w[1].cell_id));
}

#[tokio::test]
async fn bad_bbox_is_400() {
    for uri in ["/cells", "/cells?bbox=1,2,3", "/cells?bbox=51.6,0,51.5,1", "/cells?bbox=a,b,c,d"] {
        let (status, body) = get(uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(error(&body).code, "invalid_request");
    }
}

#[tokio::test]
async fn unknown_route_is_404() {
    let (status, _) = get("/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
