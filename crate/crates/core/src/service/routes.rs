use std::future::Future;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{RetextureRequest, SceneService, ServiceError};
use crate::geometry::Camera;
use crate::layout::{LayoutError, ManipulationOp};
use crate::pipeline::{png_bytes, render_scene};
use crate::texturing::default_reference_camera;

const VERSION_HEADER: HeaderName = HeaderName::from_static("x-scene-version");
const MAX_RENDER_SIDE: u32 = 4096;

struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn bad_request(msg: impl std::fmt::Display) -> Self {
        ApiError(StatusCode::BAD_REQUEST, json!({ "ok": false, "error": msg.to_string() }))
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let msg = e.to_string();
        match e {
            ServiceError::Rejected(violations) => {
                ApiError(StatusCode::CONFLICT, json!({ "ok": false, "error": msg, "violations": violations }))
            }
            ServiceError::Op(LayoutError::UnknownObject(_)) | ServiceError::UnknownJob(_) => {
                ApiError(StatusCode::NOT_FOUND, json!({ "ok": false, "error": msg }))
            }
            ServiceError::Op(_) | ServiceError::Invalid(_) => ApiError::bad_request(msg),
            ServiceError::Geometry(_) | ServiceError::Persist(_) => {
                ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "ok": false, "error": msg }))
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn png(bytes: Vec<u8>, version: u64) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("image/png")), (VERSION_HEADER, HeaderValue::from(version))],
        bytes,
    )
        .into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "ok": false, "error": e.to_string() })))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "ok": true }))
}

async fn get_scene(State(svc): State<SceneService>) -> Response {
    let snap = svc.snapshot();
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json")), (VERSION_HEADER, HeaderValue::from(snap.version))],
        snap.json.clone(),
    )
        .into_response()
}

async fn post_op(State(svc): State<SceneService>, body: Bytes) -> Result<Response, ApiError> {
    let op: ManipulationOp = serde_json::from_slice(&body).map_err(ApiError::bad_request)?;
    let outcome = blocking(move || svc.apply(&op)).await??;
    Ok((StatusCode::OK, Json(outcome)).into_response())
}

async fn post_retexture(State(svc): State<SceneService>, body: Bytes) -> Result<Response, ApiError> {
    let request: RetextureRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RetextureRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(ApiError::bad_request)?
    };
    let job = svc.submit_retexture(request)?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(State(svc): State<SceneService>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.job(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    cam: Option<String>,
    w: Option<u32>,
    h: Option<u32>,
}

async fn get_render(State(svc): State<SceneService>, Query(q): Query<RenderQuery>) -> Result<Response, ApiError> {
    let (w, h) = (q.w.unwrap_or(512), q.h.unwrap_or(512));
    if !(1..=MAX_RENDER_SIDE).contains(&w) || !(1..=MAX_RENDER_SIDE).contains(&h) {
        return Err(ApiError::bad_request(format!("render size must be within 1..={MAX_RENDER_SIDE}")));
    }
    let snap = svc.snapshot();
    let camera = match &q.cam {
        Some(spec) => Camera::parse_spec(spec, w, h).map_err(ApiError::bad_request)?,
        None => default_reference_camera(&snap.scene.project.room, w, h),
    };
    let version = snap.version;
    let bytes = blocking(move || render_scene(&snap.scene, &camera).map(|img| png_bytes(&img)))
        .await?
        .map_err(ApiError::bad_request)?;
    Ok(png(bytes, version))
}

async fn get_atlas(State(svc): State<SceneService>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = svc.snapshot();
    let atlas = snap
        .scene
        .atlases
        .get(&id)
        .ok_or_else(|| ApiError::from(ServiceError::Op(LayoutError::UnknownObject(id.clone()))))?;
    Ok(png(atlas.to_png_bytes(), snap.version))
}

/// All endpoints, plus the static UI bundle at `/` when configured.
pub fn router(service: SceneService) -> Router {
    let static_dir = service.options().static_dir.clone();
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/scene", get(get_scene))
        .route("/scene/ops", post(post_op))
        .route("/scene/retexture", post(post_retexture))
        .route("/jobs/{id}", get(get_job))
        .route("/render", get(get_render))
        .route("/objects/{id}/atlas", get(get_atlas))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    service: SceneService,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), dir = %service.project_dir().display(), "scene service listening");
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}
