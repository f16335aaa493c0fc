//! Scoring HTTP service.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use post_core::{post_score, GeometryError, LandmarkSet, PostResult};
use post_models::artifact::sha256_hex;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::infer::{InferError, ScoreReport, Scorer};

/// One row of the interpretation lookup: applies when `min <= score < max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub min: f64,
    pub max: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Bearer token; `None` disables authentication.
    pub token: Option<String>,
    pub max_body_bytes: usize,
    /// Concurrent inferences.
    pub max_concurrency: usize,
    pub interpretations: Vec<Interpretation>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            token: None,
            max_body_bytes: 10 * 1024 * 1024,
            max_concurrency: 4,
            interpretations: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn interpret(&self, score: f64) -> Option<String> {
        self.interpretations
            .iter()
            .find(|i| i.min <= score && score < i.max)
            .map(|i| i.text.clone())
    }
}

#[derive(Clone)]
pub struct AppState {
    scorer: Arc<Scorer>,
    config: Arc<ServiceConfig>,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(scorer: Scorer, config: ServiceConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_concurrency.max(1)));
        Self {
            scorer: Arc::new(scorer),
            config: Arc::new(config),
            permits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                detail: detail.into(),
            },
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<InferError> for ApiError {
    fn from(e: InferError) -> Self {
        let status = match e {
            InferError::InvalidImage(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<GeometryError> for ApiError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DegenerateGeometry(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "DegenerateGeometry", e.to_string()),
            other => Self::bad_request(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(flatten)]
    pub report: ScoreReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomputeRequest {
    pub landmarks: LandmarkSet<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomputeResponse {
    #[serde(flatten)]
    pub post: PostResult<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<String>,
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(token) = &state.config.token else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token"))
    }
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "models": state.scorer.hashes}))
}

async fn score(
    State(state): State<AppState>,
    headers: HeaderMap,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<ScoreResponse>, ApiError> {
    authorize(&state, &headers)?;
    let mut multipart = multipart.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut upload = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), "BadRequest", e.body_text()))?
    {
        let is_image = field.name() == Some("image") || field.file_name().is_some();
        if is_image && upload.is_none() {
            let name = field.file_name().map(str::to_string);
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::new(e.status(), "BadRequest", e.body_text()))?;
            upload = Some((name, bytes));
        }
    }
    let (name, bytes) = upload.ok_or_else(|| ApiError::bad_request("multipart body has no image field"))?;
    let image_id = name.unwrap_or_else(|| format!("sha256:{}", &sha256_hex(&bytes)[..16]));
    let _permit = state.permits.clone().acquire_owned().await.expect("semaphore never closes");
    let scorer = state.scorer.clone();
    let report = tokio::task::spawn_blocking(move || scorer.score_bytes(&image_id, &bytes))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let interpretation = state.config.interpret(report.post.score);
    Ok(Json(ScoreResponse { report, interpretation }))
}

async fn recompute(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Json<RecomputeResponse>, ApiError> {
    authorize(&state, &headers)?;
    let req: RecomputeRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let post = post_score(&req.landmarks)?;
    let interpretation = state.config.interpret(post.score);
    Ok(Json(RecomputeResponse { post, interpretation }))
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/score", post(score))
        .route("/api/v1/recompute", post(recompute))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
