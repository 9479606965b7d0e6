use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use pathquant_core::{AnalyzeOptions, Engine, InferOptions, QuantResult, ReferenceBackend};
use pathquant_server::{Config, ErrorBody, InferResponse};
use reqwest::blocking::{multipart, Client};

use crate::Failure;

pub struct Scored {
    pub images: BTreeMap<String, Vec<u8>>,
    pub scoring: QuantResult,
}

/// Runs the pipeline in-process or through a server's `/api/infer`.
pub enum Scorer {
    Local(Engine),
    Remote { client: Client, base: String },
}

impl Scorer {
    pub fn local(config: &Config) -> Result<Self, Failure> {
        let usage = |e: pathquant_server::ConfigError| Failure::usage(e.to_string());
        let backend = ReferenceBackend::new(config.stain_matrix().map_err(usage)?);
        Ok(Self::Local(Engine::new(Arc::new(backend), config.limits().map_err(usage)?, InferOptions::default())))
    }

    pub fn remote(url: &str) -> Self {
        let client = Client::builder().timeout(Duration::from_secs(600)).build().expect("http client builds");
        Self::Remote { client, base: url.trim_end_matches('/').to_string() }
    }

    pub fn score(&self, bytes: &[u8], opts: &AnalyzeOptions) -> Result<Scored, Failure> {
        match self {
            Self::Local(engine) => {
                let a = engine.analyze(bytes, opts).map_err(|e| Failure::pipeline(format!("{}: {e}", e.code())))?;
                let images = a.images.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                Ok(Scored { images, scoring: a.scoring })
            }
            Self::Remote { client, base } => remote(client, base, bytes, opts),
        }
    }
}

fn remote(client: &Client, base: &str, bytes: &[u8], opts: &AnalyzeOptions) -> Result<Scored, Failure> {
    let mut query: Vec<(&str, String)> = vec![("resolution", opts.resolution.as_str().to_string())];
    if opts.slim {
        query.push(("slim", "true".into()));
    }
    query.extend(pathquant_server::params::postprocess_query(&opts.params));

    let form = multipart::Form::new().part("img", multipart::Part::bytes(bytes.to_vec()).file_name("upload"));
    let url = format!("{base}/api/infer");
    let resp =
        client.post(&url).query(&query).multipart(form).send().map_err(|e| Failure::pipeline(format!("{url}: {e}")))?;
    let status = resp.status();
    let body = resp.bytes().map_err(|e| Failure::pipeline(format!("{url}: {e}")))?;
    if !status.is_success() {
        let detail = match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(err) => format!("{}: {}", err.error, err.message),
            Err(_) => String::from_utf8_lossy(&body).into_owned(),
        };
        return Err(Failure::pipeline(format!("server returned {status}: {detail}")));
    }
    let parsed: InferResponse =
        serde_json::from_slice(&body).map_err(|e| Failure::pipeline(format!("malformed response: {e}")))?;
    let mut images = BTreeMap::new();
    for (name, b64) in parsed.images {
        let png = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| Failure::pipeline(format!("image {name} is not base64: {e}")))?;
        images.insert(name, png);
    }
    Ok(Scored { images, scoring: parsed.scoring })
}
