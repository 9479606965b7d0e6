//! Where the web app sends its computation: straight into the engine, or
//! over HTTP to an API service.

use std::collections::BTreeMap;

use axum::http::StatusCode;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use pathquant_core::imaging::decode_image;
use pathquant_core::pipeline::adjust;
use pathquant_core::{AnalyzeOptions, Engine, ImageLimits, PostprocessParams, QuantResult, Resolution};

use crate::api::InferResponse;
use crate::error::{ApiError, ErrorBody};
use crate::params::postprocess_query;
use crate::pool::JobPool;

/// Named PNG images plus their scoring.
#[derive(Clone, Debug)]
pub struct Computed {
    pub images: BTreeMap<String, Vec<u8>>,
    pub scoring: QuantResult,
}

#[derive(Clone)]
pub enum Compute {
    InProcess { engine: Engine, pool: JobPool },
    Loopback { client: reqwest::Client, base_url: String },
}

impl Compute {
    /// Full analysis of a stored original PNG.
    pub async fn analyze(&self, original_png: Vec<u8>, resolution: Resolution) -> Result<Computed, ApiError> {
        match self {
            Self::InProcess { engine, pool } => {
                let engine = engine.clone();
                pool.run(move || {
                    let opts = AnalyzeOptions { resolution, pil: true, ..Default::default() };
                    let a = engine.analyze(&original_png, &opts)?;
                    let images = a.images.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                    Ok::<_, ApiError>(Computed { images, scoring: a.scoring })
                })
                .await?
            }
            Self::Loopback { client, base_url } => {
                let form = reqwest::multipart::Form::new().part("img", png_part(original_png));
                let req = client
                    .post(format!("{base_url}/api/infer"))
                    .query(&[("resolution", resolution.as_str()), ("pil", "true")])
                    .multipart(form);
                send(req).await
            }
        }
    }

    /// Reruns post-processing from stored seg_raw and original PNGs.
    pub async fn adjust(
        &self,
        seg_raw_png: Vec<u8>,
        original_png: Vec<u8>,
        resolution: Resolution,
        params: PostprocessParams,
    ) -> Result<Computed, ApiError> {
        match self {
            Self::InProcess { engine, pool } => {
                let limits = *engine.limits();
                pool.run(move || {
                    let seg_limits = ImageLimits { max_dim: limits.max_dim.saturating_mul(2), ..limits };
                    let decode = |bytes: &[u8], limits: &ImageLimits| {
                        decode_image(bytes, true, limits).map_err(pathquant_core::PipelineError::from)
                    };
                    let seg_raw = decode(&seg_raw_png, &seg_limits)?;
                    let original = decode(&original_png, &limits)?;
                    let a = adjust(&seg_raw, Some(&original), Some(resolution.canonical_scale()), &params)?;
                    let mut images = BTreeMap::from([("seg".to_string(), a.seg)]);
                    images.extend(a.overlay.map(|o| ("overlay".to_string(), o)));
                    Ok::<_, ApiError>(Computed { images, scoring: a.scoring })
                })
                .await?
            }
            Self::Loopback { client, base_url } => {
                let form = reqwest::multipart::Form::new()
                    .part("seg_raw", png_part(seg_raw_png))
                    .part("img", png_part(original_png));
                let mut query = postprocess_query(&params);
                query.push(("resolution", resolution.as_str().to_string()));
                let req = client.post(format!("{base_url}/api/adjust")).query(&query).multipart(form);
                send(req).await
            }
        }
    }
}

fn png_part(bytes: Vec<u8>) -> reqwest::multipart::Part {
    reqwest::multipart::Part::bytes(bytes)
        .file_name("image.png")
        .mime_str("image/png")
        .expect("static mime type parses")
}

async fn send(req: reqwest::RequestBuilder) -> Result<Computed, ApiError> {
    let resp = req.send().await.map_err(|e| ApiError::internal(format!("api service unreachable: {e}")))?;
    let status = resp.status();
    let body = resp.bytes().await.map_err(|e| ApiError::internal(format!("api response truncated: {e}")))?;
    if !status.is_success() {
        let err: ErrorBody = serde_json::from_slice(&body).unwrap_or_else(|_| ErrorBody {
            error: "internal".into(),
            message: String::from_utf8_lossy(&body).into_owned(),
        });
        let status = StatusCode::from_u16(status.as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
        return Err(ApiError::new(status, wire_code(&err.error), err.message));
    }
    let parsed: InferResponse =
        serde_json::from_slice(&body).map_err(|e| ApiError::internal(format!("malformed api response: {e}")))?;
    let mut images = BTreeMap::new();
    for (name, b64) in parsed.images {
        let bytes = STANDARD.decode(&b64).map_err(|e| ApiError::internal(format!("image {name:?}: {e}")))?;
        images.insert(name, bytes);
    }
    Ok(Computed { images, scoring: parsed.scoring })
}

/// Maps a code received over the wire back onto the known set.
fn wire_code(code: &str) -> &'static str {
    const KNOWN: [&str; 6] =
        ["image_too_large", "unsupported_format", "corrupt_image", "bad_parameter", "overloaded", "not_found"];
    KNOWN.into_iter().find(|k| *k == code).unwrap_or("internal")
}
