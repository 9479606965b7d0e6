//! Service configuration: a TOML file, then `PQ_*` environment overrides.

use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use pathquant_core::{ImageLimits, StainMatrix, StainVectors};
use pathquant_store::{LocalStore, ObjectStore, S3Config, S3Store, StoreError, DEFAULT_MAX_OBJECT_BYTES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn invalid(name: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { name: name.to_string(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub host: IpAddr,
    pub api: ApiConfig,
    pub web: WebConfig,
    pub storage: StorageConfig,
    pub stains: StainVectors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    /// 0 picks an ephemeral port.
    pub port: u16,
    pub pool_size: usize,
    /// Jobs allowed to wait for a worker. Defaults to twice the pool size.
    pub queue_capacity: Option<usize>,
    pub max_dim: u32,
    pub max_upload_bytes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    #[default]
    InProcess,
    Loopback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebConfig {
    pub port: u16,
    pub ttl_secs: u64,
    pub sweep_interval_secs: u64,
    pub sample_dir: Option<PathBuf>,
    pub pipeline_mode: PipelineMode,
    /// Loopback target. Defaults to the co-launched API service.
    pub api_url: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageBackend {
    #[default]
    Local,
    S3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub backend: StorageBackend,
    pub root: PathBuf,
    pub max_object_bytes: u64,
    pub s3: S3Settings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S3Settings {
    pub endpoint: String,
    pub bucket: String,
    pub region: String,
    pub access_key: String,
    pub secret_key: String,
    pub prefix: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            host: IpAddr::from([127, 0, 0, 1]),
            api: ApiConfig::default(),
            web: WebConfig::default(),
            storage: StorageConfig::default(),
            stains: StainVectors::default(),
        }
    }
}

impl Default for ApiConfig {
    fn default() -> Self {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self { port: 8000, pool_size: cores, queue_capacity: None, max_dim: 3000, max_upload_bytes: 64 << 20 }
    }
}

impl Default for WebConfig {
    fn default() -> Self {
        Self {
            port: 8001,
            ttl_secs: 7 * 24 * 3600,
            sweep_interval_secs: 3600,
            sample_dir: None,
            pipeline_mode: PipelineMode::InProcess,
            api_url: None,
        }
    }
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            backend: StorageBackend::Local,
            root: PathBuf::from("pathquant-data"),
            max_object_bytes: DEFAULT_MAX_OBJECT_BYTES,
            s3: S3Settings::default(),
        }
    }
}

impl ApiConfig {
    pub fn queue_capacity(&self) -> usize {
        self.queue_capacity.unwrap_or(2 * self.pool_size)
    }
}

impl WebConfig {
    pub fn ttl(&self) -> Duration {
        Duration::from_secs(self.ttl_secs)
    }
}

impl Config {
    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
                toml::from_str(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|name| std::env::var(name).ok())?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `PQ_*` overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.trim().parse().map_err(|e: T::Err| invalid(name, e.to_string()))
        }
        let get = |name: &str| lookup(name).filter(|v| !v.is_empty());

        if let Some(v) = get("PQ_HOST") {
            self.host = parse("PQ_HOST", &v)?;
        }
        if let Some(v) = get("PQ_API_PORT") {
            self.api.port = parse("PQ_API_PORT", &v)?;
        }
        if let Some(v) = get("PQ_POOL_SIZE") {
            self.api.pool_size = parse("PQ_POOL_SIZE", &v)?;
        }
        if let Some(v) = get("PQ_QUEUE_CAPACITY") {
            self.api.queue_capacity = Some(parse("PQ_QUEUE_CAPACITY", &v)?);
        }
        if let Some(v) = get("PQ_MAX_DIM") {
            self.api.max_dim = parse("PQ_MAX_DIM", &v)?;
        }
        if let Some(v) = get("PQ_MAX_UPLOAD_BYTES") {
            self.api.max_upload_bytes = parse("PQ_MAX_UPLOAD_BYTES", &v)?;
        }
        if let Some(v) = get("PQ_STAIN_HEMATOXYLIN") {
            self.stains.hematoxylin = parse_vector("PQ_STAIN_HEMATOXYLIN", &v)?;
        }
        if let Some(v) = get("PQ_STAIN_DAB") {
            self.stains.dab = parse_vector("PQ_STAIN_DAB", &v)?;
        }
        if let Some(v) = get("PQ_WEB_PORT") {
            self.web.port = parse("PQ_WEB_PORT", &v)?;
        }
        if let Some(v) = get("PQ_TTL_SECS") {
            self.web.ttl_secs = parse("PQ_TTL_SECS", &v)?;
        }
        if let Some(v) = get("PQ_SAMPLE_DIR") {
            self.web.sample_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("PQ_PIPELINE_MODE") {
            self.web.pipeline_mode = match v.trim() {
                "in-process" => PipelineMode::InProcess,
                "loopback" => PipelineMode::Loopback,
                other => return Err(invalid("PQ_PIPELINE_MODE", format!("{other:?} is not in-process or loopback"))),
            };
        }
        if let Some(v) = get("PQ_API_URL") {
            self.web.api_url = Some(v);
        }
        if let Some(v) = get("PQ_STORAGE_BACKEND") {
            self.storage.backend = match v.trim() {
                "local" => StorageBackend::Local,
                "s3" => StorageBackend::S3,
                other => return Err(invalid("PQ_STORAGE_BACKEND", format!("{other:?} is not local or s3"))),
            };
        }
        if let Some(v) = get("PQ_STORAGE_ROOT") {
            self.storage.root = PathBuf::from(v);
        }
        let s3 = &mut self.storage.s3;
        for (name, field) in [
            ("PQ_S3_ENDPOINT", &mut s3.endpoint),
            ("PQ_S3_BUCKET", &mut s3.bucket),
            ("PQ_S3_REGION", &mut s3.region),
            ("PQ_S3_ACCESS_KEY", &mut s3.access_key),
            ("PQ_S3_SECRET_KEY", &mut s3.secret_key),
            ("PQ_S3_PREFIX", &mut s3.prefix),
        ] {
            if let Some(v) = get(name) {
                *field = v;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.api.pool_size == 0 {
            return Err(invalid("api.pool_size", "must be at least 1"));
        }
        if self.api.max_dim == 0 {
            return Err(invalid("api.max_dim", "must be at least 1"));
        }
        if self.web.sweep_interval_secs == 0 {
            return Err(invalid("web.sweep_interval_secs", "must be at least 1"));
        }
        self.stain_matrix()?;
        self.limits()?;
        Ok(())
    }

    pub fn stain_matrix(&self) -> Result<StainMatrix, ConfigError> {
        StainMatrix::try_from(self.stains).map_err(|e| invalid("stains", e.to_string()))
    }

    pub fn limits(&self) -> Result<ImageLimits, ConfigError> {
        let thumb = THUMBNAIL_MAX_DIM.min(self.api.max_dim);
        ImageLimits::new(self.api.max_dim, thumb).map_err(|e| invalid("api.max_dim", e.to_string()))
    }

    pub fn open_store(&self) -> Result<Arc<dyn ObjectStore>, ConfigError> {
        Ok(match self.storage.backend {
            StorageBackend::Local => Arc::new(LocalStore::with_cap(&self.storage.root, self.storage.max_object_bytes)?),
            StorageBackend::S3 => {
                let s = &self.storage.s3;
                Arc::new(S3Store::new(S3Config {
                    endpoint: s.endpoint.clone(),
                    bucket: s.bucket.clone(),
                    region: s.region.clone(),
                    access_key: s.access_key.clone(),
                    secret_key: s.secret_key.clone(),
                    prefix: s.prefix.clone(),
                })?)
            }
        })
    }
}

pub const THUMBNAIL_MAX_DIM: u32 = 512;

fn parse_vector(name: &str, raw: &str) -> Result<[f64; 3], ConfigError> {
    let parts = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| invalid(name, e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    parts.try_into().map_err(|_| invalid(name, "expected three comma-separated numbers"))
}
