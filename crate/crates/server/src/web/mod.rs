//! Session-oriented web backend: upload, process, results, ZIP export,
//! persisted adjustment, feedback and the terms-of-use gate.

pub mod archive;
pub mod compute;
pub mod session;
pub mod sweep;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, Weak};

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::header::{CACHE_CONTROL, CONTENT_DISPOSITION, CONTENT_TYPE, LOCATION};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{middleware, Extension, Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use pathquant_core::imaging::{decode_image, make_thumbnail};
use pathquant_core::{encode_png, Engine, PostprocessParams, QuantResult, Resolution, IMAGE_NAMES};
use pathquant_store::ObjectStore;
use serde::{Deserialize, Serialize};

use crate::api::read_parts;
use crate::error::{ApiError, ApiResult};
use crate::params::{parse_resolution, validate};
use crate::pool::JobPool;
use crate::records::{
    get_bytes, is_valid_id, key, load_result, load_upload, new_id, now_secs, put_json, result_key, upload_key,
    FeedbackRecord, ResultRecord, UploadRecord, FEEDBACK, RECORD,
};
use compute::{Compute, Computed};
use session::{require_terms, session_layer, wants_html, SessionId, Sessions};

const INDEX_HTML: &str = include_str!("../../static/index.html");
const TERMS_HTML: &str = include_str!("../../static/terms.html");
const SAMPLE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Clone)]
pub struct WebState {
    pub store: Arc<dyn ObjectStore>,
    /// Decodes and verifies uploads; analysis goes through `compute`.
    pub engine: Engine,
    pub pool: JobPool,
    pub compute: Compute,
    pub sessions: Sessions,
    pub locks: ResultLocks,
    pub sample_dir: Option<PathBuf>,
}

/// One async mutex per result id, created on demand and dropped once no
/// request holds it.
#[derive(Clone, Debug, Default)]
pub struct ResultLocks {
    inner: Arc<Mutex<HashMap<String, Weak<tokio::sync::Mutex<()>>>>>,
}

impl ResultLocks {
    pub fn get(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(lock) = map.get(id).and_then(Weak::upgrade) {
            return lock;
        }
        map.retain(|_, w| w.strong_count() > 0);
        let lock = Arc::new(tokio::sync::Mutex::new(()));
        map.insert(id.to_string(), Arc::downgrade(&lock));
        lock
    }
}

pub fn router(state: WebState, max_body: usize) -> Router {
    let sessions = state.sessions.clone();
    Router::new()
        .route("/", get(|| async { Html(INDEX_HTML) }))
        .route("/terms", get(|| async { Html(TERMS_HTML) }))
        .route("/terms/accept", post(accept_terms))
        .route("/upload", post(upload))
        .route("/sample", get(list_samples))
        .route("/sample/{name}", get(sample))
        .route("/process", post(process))
        .route("/results/{id}", get(results))
        .route("/download/{file}", get(download))
        .route("/adjust/{id}", post(adjust_persist))
        .route("/feedback/{id}", post(feedback))
        .layer(DefaultBodyLimit::max(max_body))
        .layer(middleware::from_fn_with_state(sessions, session_layer))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn thumbnail_png(png: &[u8], engine: &Engine) -> ApiResult<Vec<u8>> {
    // Result images are bounded by twice the upload limit (seg_raw at 10x).
    let limits = engine.limits();
    let generous = pathquant_core::ImageLimits { max_dim: limits.max_dim.saturating_mul(2), ..*limits };
    let img =
        decode_image(png, true, &generous).map_err(|e| ApiError::internal(format!("stored image unreadable: {e}")))?;
    Ok(encode_png(&make_thumbnail(&img, limits.thumbnail_max_dim)))
}

fn b64_map(images: &BTreeMap<String, Vec<u8>>) -> BTreeMap<String, String> {
    images.iter().map(|(k, v)| (k.clone(), STANDARD.encode(v))).collect()
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_parameter(format!("invalid JSON body: {e}")))
}

async fn accept_terms(
    State(st): State<WebState>,
    Extension(sid): Extension<SessionId>,
    headers: HeaderMap,
) -> Response {
    st.sessions.accept_terms(&sid);
    if wants_html(&headers) {
        (StatusCode::SEE_OTHER, [(LOCATION, "/")]).into_response()
    } else {
        StatusCode::NO_CONTENT.into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub upload_id: String,
    pub thumbnail: String,
    pub width: u32,
    pub height: u32,
}

async fn upload(
    State(st): State<WebState>,
    Extension(sid): Extension<SessionId>,
    headers: HeaderMap,
    multipart: Result<Multipart, MultipartRejection>,
) -> Response {
    if let Err(r) = require_terms(&st.sessions, &sid, &headers) {
        return r;
    }
    upload_inner(st, multipart).await.into_response()
}

async fn upload_inner(
    st: WebState,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<UploadResponse>> {
    let mut parts = read_parts(multipart, &["img"]).await?;
    let bytes = parts.remove("img").ok_or_else(|| ApiError::bad_parameter("multipart part \"img\" is required"))?;
    let (engine, store) = (st.engine.clone(), st.store.clone());
    let resp = st
        .pool
        .run(move || {
            let img = engine.decode(&bytes, false)?;
            // Re-encoding from raw pixels drops every source metadata chunk.
            let png = encode_png(&img);
            let thumb = encode_png(&make_thumbnail(&img, engine.limits().thumbnail_max_dim));
            let id = new_id();
            let object_key = upload_key(&id, "original.png")?;
            store.put(&object_key, &png, "image/png")?;
            store.put(&upload_key(&id, "thumb.png")?, &thumb, "image/png")?;
            let record = UploadRecord {
                upload_id: id.clone(),
                object_key: object_key.to_string(),
                width: img.width(),
                height: img.height(),
                created_at: now_secs(),
            };
            put_json(store.as_ref(), &upload_key(&id, RECORD)?, &record)?;
            Ok::<_, ApiError>(UploadResponse {
                upload_id: id,
                thumbnail: STANDARD.encode(thumb),
                width: record.width,
                height: record.height,
            })
        })
        .await??;
    Ok(Json(resp))
}

fn sample_path(st: &WebState, name: &str) -> Option<PathBuf> {
    let dir = st.sample_dir.as_ref()?;
    let safe =
        !name.starts_with('.') && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    let ext = name.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase())?;
    (safe && SAMPLE_EXTENSIONS.contains(&ext.as_str())).then(|| dir.join(name))
}

async fn list_samples(State(st): State<WebState>) -> ApiResult<Json<Vec<String>>> {
    let Some(dir) = st.sample_dir.clone() else { return Ok(Json(Vec::new())) };
    let names = blocking(move || {
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| ApiError::internal(format!("sample directory: {e}")))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .collect();
        names.sort();
        Ok(names)
    })
    .await?;
    Ok(Json(names.into_iter().filter(|n| sample_path(&st, n).is_some()).collect()))
}

async fn sample(State(st): State<WebState>, Path(name): Path<String>) -> ApiResult<Response> {
    let path = sample_path(&st, &name).ok_or_else(|| ApiError::not_found(format!("sample {name:?}")))?;
    let missing = ApiError::not_found(format!("sample {name:?}"));
    let bytes = blocking(move || std::fs::read(&path).map_err(|_| missing)).await?;
    let mime = match name.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("tif" | "tiff") => "image/tiff",
        _ => "image/bmp",
    };
    Ok(([(CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Clone, Debug, Deserialize)]
struct ProcessRequest {
    upload_id: String,
    resolution: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessResponse {
    pub result_id: String,
    pub thumbnails: BTreeMap<String, String>,
    pub scoring: QuantResult,
}

async fn process(
    State(st): State<WebState>,
    Extension(sid): Extension<SessionId>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if let Err(r) = require_terms(&st.sessions, &sid, &headers) {
        return r;
    }
    process_inner(st, body).await.into_response()
}

async fn process_inner(st: WebState, body: Bytes) -> ApiResult<Json<ProcessResponse>> {
    let req: ProcessRequest = parse_json(&body)?;
    let resolution = req.resolution.as_deref().map(parse_resolution).transpose()?.unwrap_or_default();
    let store = st.store.clone();
    let upload_id = req.upload_id.clone();
    let original = blocking(move || {
        let rec = load_upload(store.as_ref(), &upload_id)?;
        get_bytes(store.as_ref(), &rec.object_key)
    })
    .await?;

    let Computed { mut images, scoring } = st.compute.analyze(original.clone(), resolution).await?;
    if let Some(missing) = IMAGE_NAMES.iter().find(|n| !images.contains_key(**n)) {
        return Err(ApiError::internal(format!("pipeline returned no {missing:?} image")));
    }
    images.insert("original".to_string(), original);

    let (store, engine) = (st.store.clone(), st.engine.clone());
    let upload_id = req.upload_id;
    let resp = blocking(move || {
        let result_id = new_id();
        let mut image_keys = BTreeMap::new();
        let mut thumbs = BTreeMap::new();
        for (name, png) in &images {
            let k = result_key(&result_id, &format!("{name}.png"))?;
            store.put(&k, png, "image/png")?;
            image_keys.insert(name.clone(), k.to_string());
            let thumb = thumbnail_png(png, &engine)?;
            store.put(&result_key(&result_id, &format!("thumbs/{name}.png"))?, &thumb, "image/png")?;
            thumbs.insert(name.clone(), thumb);
        }
        let record = ResultRecord {
            result_id: result_id.clone(),
            upload_id,
            resolution,
            params: PostprocessParams::default(),
            image_keys,
            scoring,
            created_at: now_secs(),
        };
        // Written last: a result exists once its record does.
        put_json(store.as_ref(), &result_key(&result_id, RECORD)?, &record)?;
        Ok(ProcessResponse { result_id, thumbnails: b64_map(&thumbs), scoring })
    })
    .await?;
    Ok(Json(resp))
}

/// Data behind the results page.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsPage {
    pub result_id: String,
    pub upload_id: String,
    pub resolution: Resolution,
    pub params: PostprocessParams,
    /// Full precision, exactly as stored.
    pub scoring: QuantResult,
    /// Percent positive rounded to one decimal for display.
    pub percent_pos_display: String,
    pub thumbnails: BTreeMap<String, String>,
    pub download_url: String,
    pub created_at: u64,
}

pub fn display_percent(percent: f64) -> String {
    format!("{percent:.1}")
}

async fn results(State(st): State<WebState>, Path(id): Path<String>) -> ApiResult<Json<ResultsPage>> {
    let store = st.store.clone();
    let page = blocking(move || {
        let rec = load_result(store.as_ref(), &id)?;
        let mut thumbnails = BTreeMap::new();
        for name in rec.image_keys.keys() {
            let thumb = store.get(&result_key(&id, &format!("thumbs/{name}.png"))?)?;
            thumbnails.insert(name.clone(), STANDARD.encode(&thumb.bytes));
        }
        Ok(ResultsPage {
            download_url: format!("/download/{id}.zip"),
            result_id: rec.result_id,
            upload_id: rec.upload_id,
            resolution: rec.resolution,
            params: rec.params,
            scoring: rec.scoring,
            percent_pos_display: display_percent(rec.scoring.percent_pos),
            thumbnails,
            created_at: rec.created_at,
        })
    })
    .await?;
    Ok(Json(page))
}

async fn download(State(st): State<WebState>, Path(file): Path<String>) -> ApiResult<Response> {
    let id = file.strip_suffix(".zip").ok_or_else(|| ApiError::not_found(format!("download {file:?}")))?.to_string();
    let store = st.store.clone();
    let zip = blocking(move || {
        let rec = load_result(store.as_ref(), &id)?;
        let mut members = Vec::with_capacity(archive::MEMBERS.len());
        for (name, k) in &rec.image_keys {
            members.push((format!("{name}.png"), get_bytes(store.as_ref(), k)?));
        }
        members.push(("scoring.json".to_string(), archive::scoring_json(&rec.scoring)));
        members.push(("scoring.csv".to_string(), archive::scoring_csv(&rec.scoring)));
        archive::build(members).map_err(|e| ApiError::internal(format!("zip: {e}")))
    })
    .await?;
    let disposition = format!("attachment; filename=\"{file}\"");
    Ok((
        [
            (CONTENT_TYPE, "application/zip".to_string()),
            (CONTENT_DISPOSITION, disposition),
            (CACHE_CONTROL, "no-store".to_string()),
        ],
        zip,
    )
        .into_response())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustResponse {
    pub scoring: QuantResult,
    /// `seg` and `overlay` thumbnails.
    pub thumbnails: BTreeMap<String, String>,
}

async fn adjust_persist(
    State(st): State<WebState>,
    Extension(sid): Extension<SessionId>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    if let Err(r) = require_terms(&st.sessions, &sid, &headers) {
        return r;
    }
    adjust_inner(st, id, body).await.into_response()
}

async fn adjust_inner(st: WebState, id: String, body: Bytes) -> ApiResult<Json<AdjustResponse>> {
    if !is_valid_id(&id) {
        return Err(ApiError::not_found(format!("result {id:?}")));
    }
    let params: PostprocessParams =
        if body.iter().all(u8::is_ascii_whitespace) { PostprocessParams::default() } else { parse_json(&body)? };
    validate(&params)?;

    let lock = st.locks.get(&id);
    let _held = lock.lock().await;
    let store = st.store.clone();
    let rid = id.clone();
    let (record, seg_raw, original) = blocking(move || {
        let rec = load_result(store.as_ref(), &rid)?;
        let seg_raw = get_bytes(store.as_ref(), &rec.image_keys["seg_raw"])?;
        let original = get_bytes(store.as_ref(), &rec.image_keys["original"])?;
        Ok((rec, seg_raw, original))
    })
    .await?;

    let computed = st.compute.adjust(seg_raw, original, record.resolution, params).await?;
    let (store, engine) = (st.store.clone(), st.engine.clone());
    let resp = blocking(move || {
        let mut record = record;
        let mut thumbs = BTreeMap::new();
        for name in ["seg", "overlay"] {
            let png =
                computed.images.get(name).ok_or_else(|| ApiError::internal(format!("adjust returned no {name:?}")))?;
            store.put(&key(record.image_keys[name].clone())?, png, "image/png")?;
            let thumb = thumbnail_png(png, &engine)?;
            store.put(&result_key(&id, &format!("thumbs/{name}.png"))?, &thumb, "image/png")?;
            thumbs.insert(name.to_string(), thumb);
        }
        record.params = params;
        record.scoring = computed.scoring;
        put_json(store.as_ref(), &result_key(&id, RECORD)?, &record)?;
        Ok(AdjustResponse { scoring: computed.scoring, thumbnails: b64_map(&thumbs) })
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Deserialize)]
struct FeedbackBody {
    text: String,
}

async fn feedback(
    State(st): State<WebState>,
    Extension(sid): Extension<SessionId>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    if let Err(r) = require_terms(&st.sessions, &sid, &headers) {
        return r;
    }
    feedback_inner(st, id, &headers, body).await.into_response()
}

async fn feedback_inner(st: WebState, id: String, headers: &HeaderMap, body: Bytes) -> ApiResult<StatusCode> {
    let is_json =
        headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|v| v.starts_with("application/json"));
    let text = if is_json {
        parse_json::<FeedbackBody>(&body)?.text
    } else {
        String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_parameter("feedback must be UTF-8 text"))?
    };
    let store = st.store.clone();
    blocking(move || {
        load_result(store.as_ref(), &id)?;
        let record = FeedbackRecord { result_id: id.clone(), text, created_at: now_secs() };
        record.validate()?;
        // One object per entry: concurrent appends never touch the same key.
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let k = key(format!("{FEEDBACK}/{id}/{nanos:024}-{}.json", new_id()))?;
        put_json(store.as_ref(), &k, &record)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_rounding_for_display() {
        assert_eq!(display_percent(40.0), "40.0");
        assert_eq!(display_percent(100.0 / 3.0), "33.3");
        assert_eq!(display_percent(200.0 / 3.0), "66.7");
        assert_eq!(display_percent(0.0), "0.0");
    }

    #[tokio::test]
    async fn result_locks_are_shared_then_released() {
        let locks = ResultLocks::default();
        let a = locks.get("r");
        let b = locks.get("r");
        assert!(Arc::ptr_eq(&a, &b));
        let _g = a.lock().await;
        assert!(b.try_lock().is_err());
        drop(_g);
        drop((a, b));
        let c = locks.get("other");
        assert_eq!(locks.inner.lock().unwrap().len(), 1);
        drop(c);
    }
}
