//! Flat key/value object storage with a local filesystem backend and, behind
//! the `s3` feature, an S3-compatible HTTP backend.
//!
//! All operations are blocking. Callers inside an async runtime should hop
//! onto a blocking thread first.

use std::fmt;

use thiserror::Error;

mod local;
#[cfg(feature = "s3")]
pub mod s3;

pub use local::LocalStore;
#[cfg(feature = "s3")]
pub use s3::{S3Config, S3Store};

/// Default per-object size cap.
pub const DEFAULT_MAX_OBJECT_BYTES: u64 = 256 * 1024 * 1024;
pub const MAX_KEY_LEN: usize = 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object not found: {0}")]
    NotFound(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("invalid object key: {0}")]
    KeyInvalid(String),
    #[error("object of {size} bytes exceeds the {cap} byte cap")]
    TooLarge { size: u64, cap: u64 },
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        Self::StorageUnavailable(e.to_string())
    }
}

/// Slash-separated key whose segments match `[A-Za-z0-9._-]+`, excluding
/// `.` and `..`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey(String);

impl ObjectKey {
    pub fn new(key: impl Into<String>) -> Result<Self, StoreError> {
        let key = key.into();
        if key.is_empty() || key.len() > MAX_KEY_LEN {
            return Err(StoreError::KeyInvalid(format!("key length {} outside 1..={MAX_KEY_LEN}", key.len())));
        }
        for seg in key.split('/') {
            let charset_ok = seg.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
            if seg.is_empty() || seg == "." || seg == ".." || !charset_ok {
                return Err(StoreError::KeyInvalid(format!("bad segment {seg:?} in {key:?}")));
            }
        }
        Ok(Self(key))
    }

    /// Appends one or more segments.
    pub fn join(&self, tail: &str) -> Result<Self, StoreError> {
        Self::new(format!("{}/{tail}", self.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectKey({:?})", self.0)
    }
}

impl TryFrom<&str> for ObjectKey {
    type Error = StoreError;

    fn try_from(s: &str) -> Result<Self, StoreError> {
        Self::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredObject {
    pub key: ObjectKey,
    pub bytes: Vec<u8>,
    pub content_type: String,
}

pub trait ObjectStore: Send + Sync {
    /// Atomic, last-writer-wins.
    fn put(&self, key: &ObjectKey, bytes: &[u8], content_type: &str) -> Result<(), StoreError>;

    fn get(&self, key: &ObjectKey) -> Result<StoredObject, StoreError>;

    /// Succeeds when the key is already absent.
    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError>;

    /// Every key starting with `prefix`, sorted lexicographically.
    fn list(&self, prefix: &str) -> Result<Vec<ObjectKey>, StoreError>;
}

fn check_content_type(content_type: &str) -> Result<(), StoreError> {
    if content_type.is_empty() || content_type.len() > 255 || content_type.bytes().any(|b| b.is_ascii_control()) {
        return Err(StoreError::StorageUnavailable(format!("unusable content type {content_type:?}")));
    }
    Ok(())
}

fn check_size(len: usize, cap: u64) -> Result<(), StoreError> {
    if len as u64 > cap {
        return Err(StoreError::TooLarge { size: len as u64, cap });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_validation() {
        for ok in ["a", "uploads/abc-_.1/original.png", "x/y/z", "..a", "a.."] {
            ObjectKey::new(ok).unwrap();
        }
        for bad in ["", "/a", "a/", "a//b", "../x", "a/./b", "a/../b", "a b", "a\\b", "é", ".."] {
            assert!(ObjectKey::new(bad).is_err(), "{bad:?}");
        }
        assert!(ObjectKey::new("a".repeat(MAX_KEY_LEN)).is_ok());
        assert!(ObjectKey::new("a".repeat(MAX_KEY_LEN + 1)).is_err());
    }

    #[test]
    fn join_validates() {
        let base = ObjectKey::new("results/r1").unwrap();
        assert_eq!(base.join("seg.png").unwrap().as_str(), "results/r1/seg.png");
        assert!(base.join("../escape").is_err());
    }
}
