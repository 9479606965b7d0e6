//! Upload, result and feedback records, stored as JSON beside their images.
//!
//! Layout under the object store:
//!
//! ```text
//! uploads/{upload_id}/record.json, original.png, thumb.png
//! results/{result_id}/record.json, {name}.png, thumbs/{name}.png
//! feedback/{result_id}/{stamp}-{id}.json
//! ```

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use pathquant_core::engine::Resolution;
use pathquant_core::{PostprocessParams, QuantResult};
use pathquant_store::{ObjectKey, ObjectStore, StoreError};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const UPLOADS: &str = "uploads";
pub const RESULTS: &str = "results";
pub const FEEDBACK: &str = "feedback";
pub const RECORD: &str = "record.json";
pub const MAX_FEEDBACK_CHARS: usize = 10_000;

/// 128 random bits, URL-safe Base64 without padding (22 characters).
pub fn new_id() -> String {
    URL_SAFE_NO_PAD.encode(rand::rng().random::<[u8; 16]>())
}

/// Ids arrive in URLs; anything not shaped like [`new_id`] output is
/// treated as unknown rather than used to build a key.
pub fn is_valid_id(id: &str) -> bool {
    id.len() == 22 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn key(s: impl Into<String>) -> Result<ObjectKey, ApiError> {
    ObjectKey::new(s).map_err(|e| ApiError::internal(e.to_string()))
}

pub fn upload_key(id: &str, file: &str) -> Result<ObjectKey, ApiError> {
    key(format!("{UPLOADS}/{id}/{file}"))
}

pub fn result_key(id: &str, file: &str) -> Result<ObjectKey, ApiError> {
    key(format!("{RESULTS}/{id}/{file}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub upload_id: String,
    pub object_key: String,
    pub width: u32,
    pub height: u32,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub result_id: String,
    pub upload_id: String,
    pub resolution: Resolution,
    /// Last applied.
    pub params: PostprocessParams,
    /// The seven result images plus a copy of the original, so a result
    /// outlives the upload it came from.
    pub image_keys: BTreeMap<String, String>,
    pub scoring: QuantResult,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub result_id: String,
    pub text: String,
    pub created_at: u64,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<(), ApiError> {
        if self.text.trim().is_empty() {
            return Err(ApiError::bad_parameter("feedback text is empty"));
        }
        let n = self.text.chars().count();
        if n > MAX_FEEDBACK_CHARS {
            return Err(ApiError::bad_parameter(format!(
                "feedback is {n} characters; the limit is {MAX_FEEDBACK_CHARS}"
            )));
        }
        Ok(())
    }
}

pub fn put_json<T: Serialize>(store: &dyn ObjectStore, key: &ObjectKey, value: &T) -> Result<(), ApiError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(store.put(key, &bytes, "application/json")?)
}

pub fn get_json<T: DeserializeOwned>(store: &dyn ObjectStore, key: &ObjectKey) -> Result<T, ApiError> {
    let obj = store.get(key)?;
    serde_json::from_slice(&obj.bytes).map_err(|e| ApiError::internal(format!("{key}: {e}")))
}

pub fn get_bytes(store: &dyn ObjectStore, key_str: &str) -> Result<Vec<u8>, ApiError> {
    Ok(store.get(&key(key_str)?)?.bytes)
}

pub fn load_upload(store: &dyn ObjectStore, id: &str) -> Result<UploadRecord, ApiError> {
    if !is_valid_id(id) {
        return Err(ApiError::not_found(format!("upload {id:?}")));
    }
    get_json(store, &upload_key(id, RECORD)?).map_err(|e| relabel(e, "upload", id))
}

pub fn load_result(store: &dyn ObjectStore, id: &str) -> Result<ResultRecord, ApiError> {
    if !is_valid_id(id) {
        return Err(ApiError::not_found(format!("result {id:?}")));
    }
    get_json(store, &result_key(id, RECORD)?).map_err(|e| relabel(e, "result", id))
}

fn relabel(e: ApiError, kind: &str, id: &str) -> ApiError {
    if e.code == "not_found" {
        ApiError::not_found(format!("{kind} {id:?}"))
    } else {
        e
    }
}

/// Deletes every object under `prefix`.
pub fn delete_prefix(store: &dyn ObjectStore, prefix: &str) -> Result<usize, StoreError> {
    let keys = store.list(prefix)?;
    for k in &keys {
        store.delete(k)?;
    }
    Ok(keys.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_url_safe_and_distinct() {
        let a = new_id();
        let b = new_id();
        assert_ne!(a, b);
        assert!(is_valid_id(&a), "{a}");
        ObjectKey::new(format!("results/{a}/seg.png")).unwrap();
        for bad in ["", "short", "../../../../../etc/passwd", "aaaaaaaaaaaaaaaaaaaaa/", "aaaaaaaaaaaaaaaaaaaaaaa"] {
            assert!(!is_valid_id(bad), "{bad}");
        }
    }

    #[test]
    fn feedback_limits() {
        let fb = |text: String| FeedbackRecord { result_id: new_id(), text, created_at: 0 };
        assert!(fb("".into()).validate().is_err());
        assert!(fb(" \n".into()).validate().is_err());
        fb("fine".into()).validate().unwrap();
        fb("é".repeat(MAX_FEEDBACK_CHARS)).validate().unwrap();
        assert!(fb("x".repeat(MAX_FEEDBACK_CHARS + 1)).validate().is_err());
    }
}
