//! JSON-over-HTTP service for live sessions under `/api/v1`.
//!
//! The browser client polls: it fetches a stimulus, posts the response, and
//! re-reads the heatmap after every trial.

mod app;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

pub use app::{ApiError, ApiSession, App, CreateSession, Created, Format, HeatmapQuery, Links, Next, Rendered, ResponseBody, Stimulus, DATA_DIR_ENV};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Shared = State<Arc<App>>;

/// Runs `f` off the async workers; fitting can take tens of milliseconds.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_json(&e))
}

async fn create(State(app): Shared, body: Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateSession = parse(&body)?;
    let created = blocking(move || app.create(req)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list(State(app): Shared) -> Result<Json<Vec<String>>, ApiError> {
    blocking(move || app.list()).await.map(Json)
}

async fn session(State(app): Shared, Path(id): Path<String>) -> Result<Json<ApiSession>, ApiError> {
    blocking(move || app.session(&id)).await.map(Json)
}

async fn stimulus(State(app): Shared, Path(id): Path<String>) -> Result<Json<Stimulus>, ApiError> {
    blocking(move || app.stimulus(&id)).await.map(Json)
}

async fn respond(State(app): Shared, Path(id): Path<String>, body: Bytes) -> Result<Json<Next>, ApiError> {
    let req: ResponseBody = parse(&body)?;
    blocking(move || app.respond(&id, req)).await.map(Json)
}

async fn cue(State(app): Shared, Path(id): Path<String>) -> Result<Json<Stimulus>, ApiError> {
    blocking(move || app.cue(&id)).await.map(Json)
}

async fn heatmap(State(app): Shared, Path(id): Path<String>, Query(params): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let q = HeatmapQuery::parse(&params)?;
    let r = blocking(move || app.heatmap(&id, q)).await?;
    Ok(([(header::CONTENT_TYPE, r.content_type)], r.body).into_response())
}

async fn border(State(app): Shared, Path(id): Path<String>, Query(params): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let threshold = match params.get("threshold") {
        None => None,
        Some(t) => Some(t.parse::<f64>().map_err(|_| {
            ApiError::invalid("invalid threshold", vec![neglect_core::domain::FieldError { field: "threshold".into(), message: format!("not a number: {t:?}") }])
        })?),
    };
    let b = blocking(move || app.border(&id, threshold)).await?;
    Ok(Json(b).into_response())
}

async fn model(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let m = blocking(move || app.model(&id)).await?;
    Ok(Json(&*m).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/api/v1/sessions", post(create).get(list))
        .route("/api/v1/sessions/{id}", get(session))
        .route("/api/v1/sessions/{id}/stimulus", get(stimulus))
        .route("/api/v1/sessions/{id}/response", post(respond))
        .route("/api/v1/sessions/{id}/heatmap", get(heatmap))
        .route("/api/v1/sessions/{id}/border", get(border))
        .route("/api/v1/sessions/{id}/cue", post(cue))
        .route("/api/v1/sessions/{id}/model", get(model))
        .fallback(fallback)
        .with_state(app)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, app: Arc<App>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
