//! The stateless inference API: `/api/infer`, `/api/adjust`, `/api/health`
//! and `/api/metrics`. Nothing here writes to storage.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use pathquant_core::imaging::decode_image;
use pathquant_core::pipeline::{adjust, Adjusted};
use pathquant_core::{AnalyzeOptions, Engine, ImageLimits, QuantResult, RasterImage};
use pathquant_store::ObjectStore;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::params::{parse_adjust, parse_infer};
use crate::pool::{JobPool, PoolMetrics};
use crate::records::{get_bytes, load_result};

/// Body of a successful `/api/infer` or `/api/adjust`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    /// Image name to standard padded Base64 PNG.
    pub images: BTreeMap<String, String>,
    pub scoring: QuantResult,
}

#[derive(Clone)]
pub struct ApiState {
    pub engine: Engine,
    pub pool: JobPool,
    /// Read-only access to stored web results for `?result_id=`.
    pub results: Option<Arc<dyn ObjectStore>>,
}

impl ApiState {
    /// seg_raw sits at canonical scale, which for 10x input is twice the
    /// upload limit.
    fn seg_raw_limits(&self) -> ImageLimits {
        let l = self.engine.limits();
        ImageLimits { max_dim: l.max_dim.saturating_mul(2), ..*l }
    }
}

pub fn router(state: ApiState, max_body: usize) -> Router {
    Router::new()
        .route("/api/infer", post(infer))
        .route("/api/adjust", post(adjust_scores))
        .route("/api/health", get(health))
        .route("/api/metrics", get(metrics))
        .layer(DefaultBodyLimit::max(max_body))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn metrics(State(st): State<ApiState>) -> Json<PoolMetrics> {
    Json(st.pool.metrics())
}

async fn infer(
    State(st): State<ApiState>,
    Query(query): Query<Vec<(String, String)>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<InferResponse>> {
    let p = parse_infer(&query)?;
    let mut parts = read_parts(multipart, &["img"]).await?;
    let bytes = parts.remove("img").ok_or_else(|| ApiError::bad_parameter("multipart part \"img\" is required"))?;
    let opts = AnalyzeOptions { resolution: p.resolution, pil: p.pil, slim: p.slim, params: p.params };
    let engine = st.engine.clone();
    let response = st
        .pool
        .run(move || {
            let analysis = engine.analyze(&bytes, &opts)?;
            let images = analysis.images.iter().map(|(k, v)| (k.to_string(), STANDARD.encode(v))).collect();
            Ok::<_, ApiError>(InferResponse { images, scoring: analysis.scoring })
        })
        .await??;
    Ok(Json(response))
}

async fn adjust_scores(
    State(st): State<ApiState>,
    Query(query): Query<Vec<(String, String)>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<InferResponse>> {
    let p = parse_adjust(&query)?;
    let params = p.params;
    let seg_limits = st.seg_raw_limits();
    let engine = st.engine.clone();

    let job: Box<dyn FnOnce() -> ApiResult<Adjusted> + Send> = match &p.result_id {
        Some(id) => {
            let store = st.results.clone().ok_or_else(|| ApiError::not_found(format!("result {id:?}")))?;
            let id = id.clone();
            Box::new(move || {
                let record = load_result(store.as_ref(), &id)?;
                let seg_raw = decode_png(&get_bytes(store.as_ref(), &record.image_keys["seg_raw"])?, &seg_limits)?;
                let original =
                    decode_png(&get_bytes(store.as_ref(), &record.image_keys["original"])?, engine.limits())?;
                let scale = p.resolution.unwrap_or(record.resolution).canonical_scale();
                Ok(adjust(&seg_raw, Some(&original), Some(scale), &params)?)
            })
        }
        None => {
            let mut parts = read_parts(multipart, &["seg_raw", "img"]).await?;
            let seg_bytes = parts
                .remove("seg_raw")
                .ok_or_else(|| ApiError::bad_parameter("multipart part \"seg_raw\" or query result_id is required"))?;
            let img_bytes = parts.remove("img");
            let scale = p.resolution.map(|r| r.canonical_scale());
            Box::new(move || {
                let seg_raw = decode_png(&seg_bytes, &seg_limits)?;
                let original = img_bytes.map(|b| engine.decode(&b, false)).transpose()?;
                Ok(adjust(&seg_raw, original.as_ref(), scale, &params)?)
            })
        }
    };
    let adjusted = st.pool.run(job).await??;
    let mut images = BTreeMap::from([("seg".to_string(), STANDARD.encode(&adjusted.seg))]);
    if let Some(overlay) = &adjusted.overlay {
        images.insert("overlay".to_string(), STANDARD.encode(overlay));
    }
    Ok(Json(InferResponse { images, scoring: adjusted.scoring }))
}

fn decode_png(bytes: &[u8], limits: &ImageLimits) -> ApiResult<RasterImage> {
    decode_image(bytes, true, limits).map_err(|e| pathquant_core::PipelineError::from(e).into())
}

/// Collects the named parts of a multipart body. Other parts are skipped.
pub(crate) async fn read_parts(
    multipart: Result<Multipart, MultipartRejection>,
    wanted: &[&str],
) -> ApiResult<BTreeMap<String, Vec<u8>>> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_parameter(format!("expected a multipart body: {e}")))?;
    let mut out = BTreeMap::new();
    loop {
        let field = multipart.next_field().await.map_err(multipart_error)?;
        let Some(field) = field else { break };
        let Some(name) = field.name().map(str::to_owned) else { continue };
        if !wanted.contains(&name.as_str()) {
            continue;
        }
        let bytes = field.bytes().await.map_err(multipart_error)?;
        out.insert(name, bytes.to_vec());
    }
    Ok(out)
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "image_too_large", format!("upload exceeds the body limit: {e}"))
    } else {
        ApiError::bad_parameter(format!("malformed multipart body: {e}"))
    }
}
