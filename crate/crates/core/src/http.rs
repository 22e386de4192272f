//! Blocking HTTP transports: live, recording, and fixture replay.
//!
//! # Fixture directory format
//!
//! A fixture is a pair of files in one flat directory:
//!
//! * `<name>.json`, the metadata:
//!   `{"method", "url", "body_sha256", "status", "headers", "body_file"}`,
//!   where `body_sha256` is the lowercase hex SHA-256 of the *request* body
//!   (the digest of the empty string for body-less requests), `headers` is
//!   an object of response headers and `body_file` names the sibling file
//!   holding the response body;
//! * the response body file, raw bytes.
//!
//! A request matches a fixture when method, full URL (including the encoded
//! query string) and request-body digest are all equal. Replay never opens
//! a socket. The same directory can be handed to a generated program's
//! runtime (see the sandbox module), which applies the same matching rule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HttpError {
    #[error("network error: {0}")]
    Network(String),
    #[error("no fixture for {method} {url}")]
    FixtureMiss { method: String, url: String },
    #[error("fixture store: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: "GET".into(),
            url: url.into(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn post_form(url: impl Into<String>, fields: &[(&str, &str)]) -> Self {
        let body = url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(fields)
            .finish();
        Self {
            method: "POST".into(),
            url: url.into(),
            headers: vec![(
                "content-type".into(),
                "application/x-www-form-urlencoded".into(),
            )],
            body: body.into_bytes(),
        }
    }

    pub fn body_digest(&self) -> String {
        hex::encode(Sha256::digest(&self.body))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub trait HttpTransport: Sync {
    /// Returns the response for any status code; only transport failures
    /// are errors.
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, HttpError>;
}

pub struct LiveHttp {
    client: reqwest::blocking::Client,
}

impl LiveHttp {
    pub fn new(timeout: Duration) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("geodata/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| HttpError::Network(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for LiveHttp {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, HttpError> {
        let method = reqwest::Method::from_bytes(req.method.as_bytes())
            .map_err(|e| HttpError::Network(e.to_string()))?;
        let mut builder = self.client.request(method, &req.url);
        for (k, v) in &req.headers {
            builder = builder.header(k, v);
        }
        if !req.body.is_empty() {
            builder = builder.body(req.body.clone());
        }
        let resp = builder
            .send()
            .map_err(|e| HttpError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_string(), v.to_str().ok()?.to_string())))
            .collect();
        let body = resp
            .bytes()
            .map_err(|e| HttpError::Network(e.to_string()))?
            .to_vec();
        Ok(HttpResponse {
            status,
            headers,
            body,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub method: String,
    pub url: String,
    #[serde(default = "empty_digest")]
    pub body_sha256: String,
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    pub body_file: String,
}

fn empty_digest() -> String {
    hex::encode(Sha256::digest(b""))
}

fn ok_status() -> u16 {
    200
}

type FixtureKey = (String, String, String);

pub struct FixtureHttp {
    dir: PathBuf,
    table: BTreeMap<FixtureKey, FixtureMeta>,
}

impl FixtureHttp {
    pub fn open(dir: &Path) -> Result<Self, HttpError> {
        let mut table = BTreeMap::new();
        let rd = std::fs::read_dir(dir)
            .map_err(|e| HttpError::Fixture(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| HttpError::Fixture(format!("{}: {e}", p.display())))?;
            let meta: FixtureMeta = serde_json::from_str(&text)
                .map_err(|e| HttpError::Fixture(format!("{}: {e}", p.display())))?;
            let key = (
                meta.method.to_uppercase(),
                meta.url.clone(),
                meta.body_sha256.clone(),
            );
            table.entry(key).or_insert(meta);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl HttpTransport for FixtureHttp {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, HttpError> {
        let key = (
            req.method.to_uppercase(),
            req.url.clone(),
            req.body_digest(),
        );
        let meta = self.table.get(&key).ok_or_else(|| HttpError::FixtureMiss {
            method: req.method.clone(),
            url: req.url.clone(),
        })?;
        let body = std::fs::read(self.dir.join(&meta.body_file))
            .map_err(|e| HttpError::Fixture(format!("{}: {e}", meta.body_file)))?;
        Ok(HttpResponse {
            status: meta.status,
            headers: meta.headers.clone(),
            body,
        })
    }
}

/// Wraps another transport and writes every exchange as a fixture.
pub struct RecordingHttp<T> {
    inner: T,
    dir: PathBuf,
    lock: Mutex<()>,
}

impl<T: HttpTransport> RecordingHttp<T> {
    pub fn new(inner: T, dir: &Path) -> Result<Self, HttpError> {
        std::fs::create_dir_all(dir).map_err(|e| HttpError::Fixture(e.to_string()))?;
        Ok(Self {
            inner,
            dir: dir.to_path_buf(),
            lock: Mutex::new(()),
        })
    }
}

pub fn fixture_name(req: &HttpRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.method.to_uppercase().as_bytes());
    h.update(b"\n");
    h.update(req.url.as_bytes());
    h.update(b"\n");
    h.update(req.body_digest().as_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn write_fixture(
    dir: &Path,
    req: &HttpRequest,
    resp: &HttpResponse,
) -> Result<PathBuf, HttpError> {
    let name = fixture_name(req);
    let meta = FixtureMeta {
        method: req.method.to_uppercase(),
        url: req.url.clone(),
        body_sha256: req.body_digest(),
        status: resp.status,
        headers: resp.headers.clone(),
        body_file: format!("{name}.body"),
    };
    let io = |e: std::io::Error| HttpError::Fixture(e.to_string());
    std::fs::write(dir.join(&meta.body_file), &resp.body).map_err(io)?;
    let meta_path = dir.join(format!("{name}.json"));
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("serializable"),
    )
    .map_err(io)?;
    Ok(meta_path)
}

impl<T: HttpTransport> HttpTransport for RecordingHttp<T> {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, HttpError> {
        let resp = self.inner.send(req)?;
        let _guard = self.lock.lock().expect("fixture lock");
        write_fixture(&self.dir, req, &resp)?;
        Ok(resp)
    }
}
