//! JSON-over-HTTP front end to a [`ServiceState`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use matprint_core::features::{canonicalize_frame, CaptureSource, FramePair};
use matprint_core::imaging::RgbImage;
use matprint_core::service::{predict_fingerprint, retrieve_hits, PredictInput, RetrieveQuery, ServiceState};
use matprint_core::{Error, Fingerprint, MaterialId};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(Error::invalid(r.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            Error::InvalidInput(_) | Error::Training(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            Error::Format { .. } => (StatusCode::BAD_REQUEST, "format_error"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::DependencyUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "dependency_unavailable"),
            Error::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io_error"),
        };
        let body = ErrorBody {
            code: code.to_string(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Shared = State<Arc<ServiceState>>;

/// Base64-encoded PNG or JPEG frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImagePair {
    pub non_specular: String,
    pub near_specular: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictRequest {
    #[serde(default)]
    pub extractor_id: Option<String>,
    #[serde(default)]
    pub vector: Option<Vec<f64>>,
    #[serde(default)]
    pub images: Option<ImagePair>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RetrieveRequest {
    #[serde(default)]
    pub material_id: Option<MaterialId>,
    #[serde(default)]
    pub fingerprint: Option<Fingerprint>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn decode_frame(field: &str, b64: &str) -> Result<RgbImage, Error> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| Error::invalid(format!("{field}: not base64: {e}")))?;
    canonicalize_frame(&RgbImage::decode(&bytes)?)
}

async fn attributes(State(state): Shared) -> Response {
    Json(&state.db().schema).into_response()
}

async fn materials(State(state): Shared) -> Response {
    Json(&state.db().materials).into_response()
}

async fn material(State(state): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = state
        .db()
        .get(&MaterialId::new(id.as_str()))
        .ok_or_else(|| Error::NotFound(format!("material '{id}'")))?;
    Ok(Json(rec).into_response())
}

async fn embedding(State(state): Shared) -> Response {
    Json(state.embedding()).into_response()
}

async fn predict(
    State(state): Shared,
    body: Result<Json<PredictRequest>, JsonRejection>,
) -> ApiResult<matprint_core::service::Prediction> {
    let Json(req) = body?;
    let input = match (req.vector, req.images) {
        (Some(values), None) => PredictInput::Vector {
            extractor_id: req.extractor_id,
            values,
        },
        (None, Some(images)) => PredictInput::Frames {
            extractor_id: req.extractor_id,
            pair: FramePair::new(
                decode_frame("non_specular", &images.non_specular)?,
                decode_frame("near_specular", &images.near_specular)?,
                CaptureSource::Smartphone,
            )?,
        },
        _ => return Err(Error::invalid("give exactly one of 'vector' or 'images'").into()),
    };
    Ok(Json(predict_fingerprint(&state, &input)?))
}

async fn retrieve(
    State(state): Shared,
    body: Result<Json<RetrieveRequest>, JsonRejection>,
) -> ApiResult<Vec<matprint_core::service::RetrievalHit>> {
    let Json(req) = body?;
    let query = match (req.material_id, req.fingerprint) {
        (Some(id), None) => RetrieveQuery::MaterialId(id),
        (None, Some(fp)) => RetrieveQuery::Fingerprint(fp),
        _ => return Err(Error::invalid("give exactly one of 'material_id' or 'fingerprint'").into()),
    };
    Ok(Json(retrieve_hits(&state, &query, req.k.unwrap_or(DEFAULT_K), req.alpha)?))
}

async fn unknown_route() -> ApiError {
    Error::NotFound("no such endpoint".into()).into()
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/attributes", get(attributes))
        .route("/v1/materials", get(materials))
        .route("/v1/materials/{id}", get(material))
        .route("/v1/embedding", get(embedding))
        .route("/v1/predict", post(predict))
        .route("/v1/retrieve", post(retrieve))
        .fallback(unknown_route)
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
