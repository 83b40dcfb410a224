//! Stateless HTTP front end over a [`Planner`] snapshot.
//!
//! | method | path      | body / query                               |
//! |--------|-----------|--------------------------------------------|
//! | GET    | /health   |                                            |
//! | GET    | /cells    | `bbox=minlat,minlon,maxlat,maxlon`         |
//! | POST   | /predict  | [`WhatIfRequest`] → [`WhatIfResponse`]     |
//!
//! Errors are `{"code", "message", "fields"?}` with status 400 for invalid input,
//! 422 when no 4G data can inform the candidate and 500 otherwise.
//!
//! [`WhatIfResponse`]: radioplan_core::planner::WhatIfResponse

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use radioplan_core::checkpoint::Checkpoint;
use radioplan_core::harness::RegionData;
use radioplan_core::planner::{parse_bbox, FieldError, Planner, WhatIfRequest};
use radioplan_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<FieldError>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

static INTERNAL_ERRORS: AtomicU64 = AtomicU64::new(0);

impl ApiError {
    fn bad_request(code: &str, message: String, fields: Option<Vec<FieldError>>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                code: code.into(),
                message,
                fields,
            },
        }
    }

    fn internal(detail: &dyn std::fmt::Display) -> Self {
        let id = format!("E{:08}", INTERNAL_ERRORS.fetch_add(1, Ordering::Relaxed) + 1);
        eprintln!("internal error {id}: {detail}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                code: "internal".into(),
                message: format!("internal error {id}"),
                fields: None,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidField { field, reason } => {
                let message = format!("invalid {field}: {reason}");
                Self::bad_request("invalid_request", message, Some(vec![FieldError { field, message: reason }]))
            }
            Error::InvalidCoordinate { field, value } => Self::bad_request(
                "invalid_request",
                e.to_string(),
                Some(vec![FieldError {
                    field: field.into(),
                    message: format!("out of range: {value}"),
                }]),
            ),
            Error::NoFourGCells => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    code: "no_4g_cells".into(),
                    message: e.to_string(),
                    fields: None,
                },
            },
            other => Self::internal(&other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: String,
    pub cells: usize,
    pub latest_date: String,
}

async fn health(State(planner): State<Arc<Planner>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_version: planner.model_version().into(),
        cells: planner.inventory().len(),
        latest_date: planner.latest_date().to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct CellsQuery {
    bbox: Option<String>,
}

async fn cells(
    State(planner): State<Arc<Planner>>,
    query: Result<Query<CellsQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::bad_request("invalid_request", e.body_text(), None))?;
    let bbox = query
        .bbox
        .ok_or_else(|| ApiError::bad_request("invalid_request", "missing bbox query parameter".into(), None))?;
    let bbox = parse_bbox(&bbox)?;
    Ok(Json(planner.cells_in(&bbox)?).into_response())
}

async fn predict(State(planner): State<Arc<Planner>>, body: Bytes) -> Result<Response, ApiError> {
    let req: WhatIfRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("invalid_json", format!("request body: {e}"), None))?;
    let errors = req.field_errors();
    if !errors.is_empty() {
        let message = errors
            .iter()
            .map(|f| format!("{}: {}", f.field, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ApiError::bad_request("invalid_request", message, Some(errors)));
    }
    let response = tokio::task::spawn_blocking(move || planner.predict(&req))
        .await
        .map_err(|e| ApiError::internal(&e))??;
    Ok(Json(response).into_response())
}

pub fn router(planner: Arc<Planner>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/cells", get(cells))
        .route("/predict", post(predict))
        .with_state(planner)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory holding `inventory.csv` and `kpi.csv`.
    pub data_dir: PathBuf,
    /// One checkpoint per KPI.
    pub checkpoints: Vec<PathBuf>,
    pub bind: SocketAddr,
}

/// Loads data and checkpoints; fails before anything is bound.
pub fn load_planner(data_dir: &Path, checkpoints: &[PathBuf]) -> radioplan_core::Result<Planner> {
    let models = checkpoints
        .iter()
        .map(|p| {
            if !p.is_file() {
                return Err(Error::Checkpoint(format!("{}: file not found", p.display())));
            }
            Checkpoint::load(p)
        })
        .collect::<radioplan_core::Result<Vec<_>>>()?;
    let region = RegionData::load(data_dir)?;
    Planner::new(region.inventory, region.kpis, models)
}

/// Serves until `shutdown` resolves. Returns the bound address through `on_bound`.
pub async fn serve_with_shutdown<F>(
    planner: Arc<Planner>,
    bind: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: F,
) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let listener = tokio::net::TcpListener::bind(bind).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(planner))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Blocking entry point: load, bind, serve until a shutdown signal.
pub fn run(cfg: &ServiceConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<(), Box<dyn std::error::Error>> {
    let planner = Arc::new(load_planner(&cfg.data_dir, &cfg.checkpoints)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve_with_shutdown(planner, cfg.bind, on_bound, shutdown_signal()))?;
    Ok(())
}
