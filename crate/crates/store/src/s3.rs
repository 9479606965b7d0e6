//! S3-compatible backend: path-style PUT/GET/DELETE and ListObjectsV2,
//! signed with AWS Signature Version 4.

use hmac::{Hmac, KeyInit, Mac};
use reqwest::blocking::Client;
use reqwest::{StatusCode, Url};
use sha2::{Digest, Sha256};
use time::macros::format_description;
use time::OffsetDateTime;

use crate::{
    check_content_type, check_size, ObjectKey, ObjectStore, StoreError, StoredObject, DEFAULT_MAX_OBJECT_BYTES,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct S3Config {
    /// Scheme, host and optional port, e.g. `https://s3.us-east-1.amazonaws.com`.
    pub endpoint: String,
    pub bucket: String,
    pub region: String,
    pub access_key: String,
    pub secret_key: String,
    /// Prepended to every key, without a trailing slash. May be empty.
    pub prefix: String,
}

pub struct S3Store {
    config: S3Config,
    base: Url,
    client: Client,
    max_object_bytes: u64,
}

impl std::fmt::Debug for S3Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("S3Store")
            .field("endpoint", &self.config.endpoint)
            .field("bucket", &self.config.bucket)
            .field("region", &self.config.region)
            .finish_non_exhaustive()
    }
}

const SERVICE: &str = "s3";

impl S3Store {
    pub fn new(config: S3Config) -> Result<Self, StoreError> {
        let base = Url::parse(&config.endpoint)
            .map_err(|e| StoreError::StorageUnavailable(format!("bad endpoint {:?}: {e}", config.endpoint)))?;
        if base.host_str().is_none() {
            return Err(StoreError::StorageUnavailable(format!("endpoint {:?} has no host", config.endpoint)));
        }
        if config.bucket.is_empty()
            || !config.bucket.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'.')
        {
            return Err(StoreError::StorageUnavailable(format!("bad bucket name {:?}", config.bucket)));
        }
        let client = Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| StoreError::StorageUnavailable(e.to_string()))?;
        Ok(Self { config, base, client, max_object_bytes: DEFAULT_MAX_OBJECT_BYTES })
    }

    fn full_key(&self, key: &str) -> String {
        if self.config.prefix.is_empty() {
            key.to_owned()
        } else {
            format!("{}/{key}", self.config.prefix)
        }
    }

    fn object_path(&self, key: &ObjectKey) -> String {
        format!("/{}/{}", self.config.bucket, uri_encode(&self.full_key(key.as_str()), false))
    }

    fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        query: &[(String, String)],
        body: Option<(&[u8], &str)>,
    ) -> Result<reqwest::blocking::Response, StoreError> {
        let payload = body.map_or(&[][..], |(b, _)| b);
        let payload_hash = hex::encode(Sha256::digest(payload));
        let amz_date = OffsetDateTime::now_utc()
            .format(format_description!("[year][month][day]T[hour][minute][second]Z"))
            .map_err(|e| StoreError::StorageUnavailable(e.to_string()))?;
        let host = host_header(&self.base);
        let headers = vec![
            ("host".to_owned(), host),
            ("x-amz-content-sha256".to_owned(), payload_hash.clone()),
            ("x-amz-date".to_owned(), amz_date.clone()),
        ];
        let creds = Credentials { access_key: &self.config.access_key, secret_key: &self.config.secret_key };
        let auth = authorization(&SigningRequest {
            method: method.as_str(),
            path,
            query,
            headers: &headers,
            payload_hash: &payload_hash,
            amz_date: &amz_date,
            region: &self.config.region,
            creds,
        });

        let mut url = self.base.clone();
        url.set_path(path);
        let qs = canonical_query(query);
        url.set_query((!qs.is_empty()).then_some(qs.as_str()));
        let mut req = self
            .client
            .request(method, url)
            .header("x-amz-content-sha256", payload_hash)
            .header("x-amz-date", amz_date)
            .header("authorization", auth);
        if let Some((bytes, content_type)) = body {
            req = req.header("content-type", content_type).body(bytes.to_vec());
        }
        req.send().map_err(|e| StoreError::StorageUnavailable(e.to_string()))
    }
}

fn unexpected(resp: reqwest::blocking::Response) -> StoreError {
    let status = resp.status();
    let body = resp.text().unwrap_or_default();
    StoreError::StorageUnavailable(format!("S3 returned {status}: {}", body.chars().take(300).collect::<String>()))
}

impl ObjectStore for S3Store {
    fn put(&self, key: &ObjectKey, bytes: &[u8], content_type: &str) -> Result<(), StoreError> {
        check_content_type(content_type)?;
        check_size(bytes.len(), self.max_object_bytes)?;
        let resp = self.send(reqwest::Method::PUT, &self.object_path(key), &[], Some((bytes, content_type)))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(unexpected(resp))
        }
    }

    fn get(&self, key: &ObjectKey) -> Result<StoredObject, StoreError> {
        let resp = self.send(reqwest::Method::GET, &self.object_path(key), &[], None)?;
        match resp.status() {
            StatusCode::NOT_FOUND => Err(StoreError::NotFound(key.to_string())),
            s if s.is_success() => {
                let content_type = resp
                    .headers()
                    .get(reqwest::header::CONTENT_TYPE)
                    .and_then(|v| v.to_str().ok())
                    .unwrap_or("application/octet-stream")
                    .to_owned();
                let bytes = resp.bytes().map_err(|e| StoreError::StorageUnavailable(e.to_string()))?.to_vec();
                Ok(StoredObject { key: key.clone(), bytes, content_type })
            }
            _ => Err(unexpected(resp)),
        }
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        let resp = self.send(reqwest::Method::DELETE, &self.object_path(key), &[], None)?;
        if resp.status().is_success() || resp.status() == StatusCode::NOT_FOUND {
            Ok(())
        } else {
            Err(unexpected(resp))
        }
    }

    fn list(&self, prefix: &str) -> Result<Vec<ObjectKey>, StoreError> {
        let strip = if self.config.prefix.is_empty() { String::new() } else { format!("{}/", self.config.prefix) };
        let full_prefix = format!("{strip}{prefix}");
        let mut keys = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut query = vec![("list-type".to_owned(), "2".to_owned()), ("prefix".to_owned(), full_prefix.clone())];
            if let Some(t) = &token {
                query.push(("continuation-token".to_owned(), t.clone()));
            }
            let resp = self.send(reqwest::Method::GET, &format!("/{}", self.config.bucket), &query, None)?;
            if !resp.status().is_success() {
                return Err(unexpected(resp));
            }
            let body = resp.text().map_err(|e| StoreError::StorageUnavailable(e.to_string()))?;
            let page = parse_list_page(&body);
            for k in page.keys {
                if let Some(k) = k.strip_prefix(&strip).and_then(|k| ObjectKey::new(k).ok()) {
                    keys.push(k);
                }
            }
            match page.next_token {
                Some(t) if page.truncated => token = Some(t),
                _ => break,
            }
        }
        keys.sort();
        keys.dedup();
        Ok(keys)
    }
}

#[derive(Debug, Default, PartialEq)]
struct ListPage {
    keys: Vec<String>,
    truncated: bool,
    next_token: Option<String>,
}

/// Pulls the few fields needed out of a ListObjectsV2 response body.
fn parse_list_page(xml: &str) -> ListPage {
    let mut page = ListPage::default();
    let mut rest = xml;
    while let Some(start) = rest.find("<Contents>") {
        let Some(end) = rest[start..].find("</Contents>") else { break };
        let block = &rest[start..start + end];
        if let Some(k) = element(block, "Key") {
            page.keys.push(xml_unescape(k));
        }
        rest = &rest[start + end..];
    }
    page.truncated = element(xml, "IsTruncated").is_some_and(|v| v.trim() == "true");
    page.next_token = element(xml, "NextContinuationToken").map(xml_unescape);
    page
}

fn element<'a>(xml: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let s = xml.find(&open)? + open.len();
    let e = xml[s..].find(&close)?;
    Some(&xml[s..s + e])
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"").replace("&apos;", "'").replace("&amp;", "&")
}

fn host_header(url: &Url) -> String {
    let host = url.host_str().unwrap_or_default();
    match url.port() {
        Some(port) => format!("{host}:{port}"),
        None => host.to_owned(),
    }
}

/// RFC 3986 percent-encoding of everything but unreserved characters, with
/// `/` kept when encoding a path.
fn uri_encode(s: &str, encode_slash: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') || (b == b'/' && !encode_slash) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn canonical_query(query: &[(String, String)]) -> String {
    let mut pairs: Vec<(String, String)> =
        query.iter().map(|(k, v)| (uri_encode(k, true), uri_encode(v, true))).collect();
    pairs.sort();
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("&")
}

#[derive(Clone, Copy)]
struct Credentials<'a> {
    access_key: &'a str,
    secret_key: &'a str,
}

struct SigningRequest<'a> {
    method: &'a str,
    /// Already URI-encoded absolute path.
    path: &'a str,
    query: &'a [(String, String)],
    /// Lowercase names.
    headers: &'a [(String, String)],
    payload_hash: &'a str,
    amz_date: &'a str,
    region: &'a str,
    creds: Credentials<'a>,
}

fn hmac(key: &[u8], data: &str) -> Vec<u8> {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data.as_bytes());
    mac.finalize().into_bytes().to_vec()
}

fn authorization(req: &SigningRequest<'_>) -> String {
    let mut headers: Vec<(&str, String)> =
        req.headers.iter().map(|(k, v)| (k.as_str(), v.split_whitespace().collect::<Vec<_>>().join(" "))).collect();
    headers.sort();
    let canonical_headers: String = headers.iter().map(|(k, v)| format!("{k}:{v}\n")).collect();
    let signed_headers = headers.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(";");
    let canonical_request = format!(
        "{}\n{}\n{}\n{}\n{}\n{}",
        req.method,
        req.path,
        canonical_query(req.query),
        canonical_headers,
        signed_headers,
        req.payload_hash
    );
    let date = &req.amz_date[..8];
    let scope = format!("{date}/{}/{SERVICE}/aws4_request", req.region);
    let string_to_sign = format!(
        "AWS4-HMAC-SHA256\n{}\n{scope}\n{}",
        req.amz_date,
        hex::encode(Sha256::digest(canonical_request.as_bytes()))
    );
    let k_date = hmac(format!("AWS4{}", req.creds.secret_key).as_bytes(), date);
    let k_region = hmac(&k_date, req.region);
    let k_service = hmac(&k_region, SERVICE);
    let k_signing = hmac(&k_service, "aws4_request");
    let signature = hex::encode(hmac(&k_signing, &string_to_sign));
    format!(
        "AWS4-HMAC-SHA256 Credential={}/{scope}, SignedHeaders={signed_headers}, Signature={signature}",
        req.creds.access_key
    )
}
