//! JSON API over a [`ReviewService`].
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/cases` | case summaries |
//! | GET | `/api/cases/{case_id}` | images and current score |
//! | GET | `/api/cases/{case_id}/score?min_conf=&nms=&mode=` | what-if score |
//! | GET | `/api/images/{image_id}` | review state |
//! | GET | `/api/images/{image_id}/raster` | PNG |
//! | GET | `/api/images/{image_id}/overlay` | PNG with counted detections |
//! | POST | `/api/images/{image_id}/corrections` | apply one correction |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{CorrectionError, CorrectionRequest, ReviewService, ServiceError, WhatIf};
use crate::raster::RasterImage;
use crate::reporting::case_score_json;
use crate::scoring::Aggregation;

type Shared = Arc<ReviewService>;

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: String) -> Self {
        Self {
            status,
            body: json!({ "error": kind, "message": message }),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let msg = e.to_string();
        match e {
            ServiceError::UnknownCase(_) | ServiceError::UnknownImage(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", msg)
            }
            ServiceError::Correction(CorrectionError::VersionConflict { current, .. }) => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({ "error": "version_conflict", "message": msg, "current_version": current }),
            },
            ServiceError::Correction(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_correction", msg),
            ServiceError::Scoring(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "not_scorable", msg),
            ServiceError::InvalidParameter(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameter", msg),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Routes for `service`. When `static_dir` is given it is served at `/`.
pub fn router(service: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{case_id}", get(case_detail))
        .route("/api/cases/{case_id}/score", get(case_score))
        .route("/api/images/{image_id}", get(image_state))
        .route("/api/images/{image_id}/raster", get(image_raster))
        .route("/api/images/{image_id}/overlay", get(image_overlay))
        .route("/api/images/{image_id}/corrections", post(submit_correction))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(service: Shared, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service, static_dir)).await
}

async fn list_cases(State(svc): State<Shared>) -> impl IntoResponse {
    Json(svc.cases())
}

async fn case_detail(State(svc): State<Shared>, Path(case_id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.case_detail(&case_id)?))
}

#[derive(Debug, Deserialize)]
struct ScoreQuery {
    min_conf: Option<f64>,
    nms: Option<f64>,
    mode: Option<String>,
}

async fn case_score(
    State(svc): State<Shared>,
    Path(case_id): Path<String>,
    Query(q): Query<ScoreQuery>,
) -> ApiResult<Response> {
    let mode = q
        .mode
        .map(|m| m.parse::<Aggregation>())
        .transpose()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameter", e))?;
    let score = svc.what_if(&case_id, &WhatIf { min_conf: q.min_conf, nms: q.nms, mode })?;
    Ok(([(header::CONTENT_TYPE, "application/json")], case_score_json(&score)).into_response())
}

async fn image_state(State(svc): State<Shared>, Path(image_id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.image(&image_id)?))
}

fn png(img: &RasterImage) -> ApiResult<Response> {
    let bytes = img
        .encode_png()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn image_raster(State(svc): State<Shared>, Path(image_id): Path<String>) -> ApiResult<Response> {
    png(&svc.raster(&image_id)?)
}

async fn image_overlay(State(svc): State<Shared>, Path(image_id): Path<String>) -> ApiResult<Response> {
    png(&svc.overlay(&image_id)?)
}

async fn submit_correction(
    State(svc): State<Shared>,
    Path(image_id): Path<String>,
    body: Result<Json<CorrectionRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text()))?;
    let state = tokio::task::spawn_blocking(move || svc.submit(&image_id, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(state))
}
