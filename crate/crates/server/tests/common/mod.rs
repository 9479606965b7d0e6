#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use pathquant_core::fixture::{random_spec, render, FixtureLayout};
use pathquant_core::{encode_png, RasterImage, StainMatrix};
use pathquant_server::{Config, ServerHandle};
use reqwest::blocking::{multipart, Client, Response};
use reqwest::header::{COOKIE, SET_COOKIE};

pub fn config(root: &Path) -> Config {
    let mut c = Config::default();
    c.api.port = 0;
    c.web.port = 0;
    c.api.pool_size = 2;
    c.storage.root = root.to_path_buf();
    c
}

pub fn start(c: Config) -> ServerHandle {
    pathquant_server::spawn(c).expect("server starts")
}

pub fn fixture_png(width: u32, height: u32, total: usize, positive: usize, seed: u64) -> Vec<u8> {
    encode_png(&fixture(width, height, total, positive, seed))
}

pub fn fixture(width: u32, height: u32, total: usize, positive: usize, seed: u64) -> RasterImage {
    let layout = FixtureLayout { width, height, ..FixtureLayout::default() };
    render(&random_spec(&layout, total, positive, seed).unwrap(), &StainMatrix::default())
}

pub fn img_form(name: &str, bytes: Vec<u8>) -> multipart::Form {
    multipart::Form::new().part(name.to_string(), multipart::Part::bytes(bytes).file_name("image.png"))
}

pub fn client() -> Client {
    Client::builder().timeout(std::time::Duration::from_secs(120)).build().unwrap()
}

pub fn json(resp: Response) -> serde_json::Value {
    resp.json().expect("JSON body")
}

pub fn decode_images(v: &serde_json::Value) -> BTreeMap<String, Vec<u8>> {
    v["images"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, s)| (k.clone(), STANDARD.decode(s.as_str().unwrap()).unwrap()))
        .collect()
}

/// Dimensions from the IHDR chunk, after checking the signature.
pub fn png_dims(bytes: &[u8]) -> (u32, u32) {
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n", "not a PNG");
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    (be(16), be(20))
}

/// Every chunk type in order.
pub fn png_chunks(bytes: &[u8]) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 8;
    while i + 8 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        out.push(String::from_utf8_lossy(&bytes[i + 4..i + 8]).into_owned());
        i += 12 + len;
    }
    out
}

/// A browser-like client for the web service that keeps its session cookie.
pub struct WebClient {
    pub http: Client,
    pub base: String,
    pub cookie: Option<String>,
}

impl WebClient {
    pub fn new(base: String) -> Self {
        let http = Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .unwrap();
        Self { http, base, cookie: None }
    }

    pub fn send(&mut self, req: reqwest::blocking::RequestBuilder) -> Response {
        let req = match &self.cookie {
            Some(c) => req.header(COOKIE, c.clone()),
            None => req,
        };
        let resp = req.send().unwrap();
        if let Some(v) = resp.headers().get(SET_COOKIE) {
            self.cookie = Some(v.to_str().unwrap().split(';').next().unwrap().to_string());
        }
        resp
    }

    pub fn get(&mut self, path: &str) -> Response {
        let req = self.http.get(format!("{}{path}", self.base));
        self.send(req)
    }

    pub fn post_json(&mut self, path: &str, body: &serde_json::Value) -> Response {
        let req = self.http.post(format!("{}{path}", self.base)).json(body);
        self.send(req)
    }

    pub fn accept_terms(&mut self) {
        let req = self.http.post(format!("{}/terms/accept", self.base));
        assert_eq!(self.send(req).status(), 204);
    }

    pub fn upload(&mut self, bytes: Vec<u8>) -> Response {
        let req = self.http.post(format!("{}/upload", self.base)).multipart(img_form("img", bytes));
        self.send(req)
    }

    /// Upload then process; returns the process response body.
    pub fn analyze(&mut self, bytes: Vec<u8>, resolution: Option<&str>) -> serde_json::Value {
        let up = self.upload(bytes);
        assert_eq!(up.status(), 200);
        let upload_id = json(up)["upload_id"].as_str().unwrap().to_string();
        let mut body = serde_json::json!({ "upload_id": upload_id });
        if let Some(r) = resolution {
            body["resolution"] = r.into();
        }
        let resp = self.post_json("/process", &body);
        assert_eq!(resp.status(), 200);
        json(resp)
    }
}

/// Every file under `root` with its contents, for before/after comparison.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().display().to_string(), std::fs::read(e.path()).unwrap()))
        .collect()
}
