//! Clients for the three external model roles: the captioning LVLM, the
//! text-extraction LLM and the open-vocabulary detector.
//!
//! A [`ServiceClient`] binds one [`BackendConfig`] to a [`Backend`]
//! (HTTP or fixture), and adds a content-addressed disk cache, bounded
//! in-flight requests and retries. Responses are cached as the raw text the
//! backend returned, so a diagnosis can always be replayed from cache.

mod cache;
mod fixture;
mod http;
mod limiter;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{CaptionRecord, Detection, DetectionSet, ImageRef};

pub use cache::{CacheKey, DiskCache};
pub use fixture::{ExtractionFixture, FixtureStore};
pub use http::{http_requests_issued, HttpChatBackend, HttpDetectorBackend};
pub use limiter::Limiter;

/// The fixed captioning instruction.
pub const CAPTION_PROMPT: &str = "Describe the image in detail.";

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Captioner,
    Extractor,
    Detector,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Captioner => "captioner",
            Role::Extractor => "extractor",
            Role::Detector => "detector",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("data error for `{image_id}`: {msg}")]
    Data { image_id: String, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ClientError> },
}

impl ClientError {
    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            ClientError::Exhausted { .. } => true,
            _ => false,
        }
    }

    fn data(image_id: &str, msg: impl Into<String>) -> Self {
        ClientError::Data { image_id: image_id.to_string(), msg: msg.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_ms: 500, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1`, for `attempt` starting at 1.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis(ms.round() as u64)
    }
}

/// Connection and behaviour settings for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub role: Role,
    pub endpoint_url: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Detector only: detections scoring below this are dropped.
    pub score_threshold: f64,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    /// Opaque request parameters passed through to the backend.
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            role: Role::Captioner,
            endpoint_url: String::new(),
            model_name: String::new(),
            timeout_ms: 60_000,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            api_key_env: None,
            params: BTreeMap::new(),
        }
    }
}

impl BackendConfig {
    pub fn new(role: Role, model_name: impl Into<String>) -> Self {
        Self { role, model_name: model_name.into(), ..Self::default() }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.max_in_flight < 1 {
            v.push(format!("{}: max_in_flight >= 1 violated", self.role));
        }
        if self.timeout_ms == 0 {
            v.push(format!("{}: timeout > 0 violated", self.role));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            v.push(format!("{}: score_threshold in [0,1] violated", self.role));
        }
        if self.retry.max_attempts < 1 {
            v.push(format!("{}: retry.max_attempts >= 1 violated", self.role));
        }
        if self.model_name.trim().is_empty() {
            v.push(format!("{}: model_name non-empty violated", self.role));
        }
        v
    }
}

/// Canonical request body. Its JSON serialization is what gets hashed for
/// the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Request {
    Captioner {
        model: String,
        image_id: String,
        image_uri: String,
        prompt: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, serde_json::Value>,
    },
    Extractor {
        model: String,
        prompt: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, serde_json::Value>,
    },
    Detector {
        model: String,
        image_id: String,
        image_uri: String,
        query: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, serde_json::Value>,
    },
}

impl Request {
    pub fn role(&self) -> Role {
        match self {
            Request::Captioner { .. } => Role::Captioner,
            Request::Extractor { .. } => Role::Extractor,
            Request::Detector { .. } => Role::Detector,
        }
    }

    pub fn model(&self) -> &str {
        match self {
            Request::Captioner { model, .. } | Request::Extractor { model, .. } | Request::Detector { model, .. } => {
                model
            }
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}

/// Text with trailing whitespace removed from every line and from both ends,
/// and runs of blank lines collapsed to one.
pub fn canonical_text(text: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for line in text.trim().lines().map(str::trim_end) {
        if line.is_empty() && out.last().is_some_and(|l| l.is_empty()) {
            continue;
        }
        out.push(line);
    }
    out.join("\n")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of an extraction prompt after canonicalization; fixtures key
/// extractor responses by it.
pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(canonical_text(prompt).as_bytes())
}

/// Something that answers canonical requests with raw response text.
///
/// Detector responses are a JSON array of [`Detection`]s.
pub trait Backend: Send + Sync {
    fn call(&self, request: &Request) -> Result<String, ClientError>;
}

/// A configured client for one role.
pub struct ServiceClient {
    cfg: BackendConfig,
    backend: Arc<dyn Backend>,
    cache: Option<Arc<DiskCache>>,
    limiter: Limiter,
    warnings: Mutex<Vec<String>>,
}

impl fmt::Debug for ServiceClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServiceClient").field("cfg", &self.cfg).field("cached", &self.cache.is_some()).finish()
    }
}

impl ServiceClient {
    pub fn new(cfg: BackendConfig, backend: Arc<dyn Backend>) -> Result<Self, ClientError> {
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(ClientError::Config(problems.join("; ")));
        }
        let limiter = Limiter::new(cfg.max_in_flight);
        Ok(Self { cfg, backend, cache: None, limiter, warnings: Mutex::new(Vec::new()) })
    }

    pub fn with_cache(mut self, cache: Arc<DiskCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    /// Warnings raised since the last drain (e.g. clamped boxes).
    pub fn drain_warnings(&self) -> Vec<String> {
        std::mem::take(&mut *self.warnings.lock().expect("warnings lock"))
    }

    fn warn(&self, msg: String) {
        log::warn!("{msg}");
        self.warnings.lock().expect("warnings lock").push(msg);
    }

    fn expect_role(&self, role: Role) -> Result<(), ClientError> {
        if self.cfg.role != role {
            return Err(ClientError::Contract(format!("{} client used for a {} request", self.cfg.role, role)));
        }
        Ok(())
    }

    /// Cache lookup, then the backend with bounded concurrency and retries.
    fn send(&self, request: &Request) -> Result<String, ClientError> {
        let key = CacheKey::for_request(request);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        let body = {
            let _permit = self.limiter.acquire();
            self.call_with_retry(request)?
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, &body)?;
        }
        Ok(body)
    }

    fn call_with_retry(&self, request: &Request) -> Result<String, ClientError> {
        let policy = &self.cfg.retry;
        let mut attempt = 1;
        loop {
            match self.backend.call(request) {
                Ok(body) => return Ok(body),
                Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                    log::debug!("{} attempt {attempt} failed: {e}", request.role());
                    std::thread::sleep(policy.backoff(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(ClientError::Exhausted { attempts: attempt, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Caption an image with the fixed detailed-description prompt.
    pub fn fetch_caption(&self, image: &ImageRef) -> Result<CaptionRecord, ClientError> {
        self.expect_role(Role::Captioner)?;
        let request = Request::Captioner {
            model: self.cfg.model_name.clone(),
            image_id: image.image_id.clone(),
            image_uri: image.uri.clone(),
            prompt: CAPTION_PROMPT.to_string(),
            params: self.cfg.params.clone(),
        };
        let text = self.send(&request)?;
        if text.trim().is_empty() {
            return Err(ClientError::data(&image.image_id, "empty caption"));
        }
        Ok(CaptionRecord::new(image.image_id.clone(), self.cfg.model_name.clone(), text))
    }

    /// Raw extractor output for a rendered extraction prompt.
    pub fn fetch_extraction(&self, caption: &CaptionRecord, prompt: &str) -> Result<String, ClientError> {
        self.expect_role(Role::Extractor)?;
        let request = Request::Extractor {
            model: self.cfg.model_name.clone(),
            prompt: canonical_text(prompt),
            params: self.cfg.params.clone(),
        };
        self.send(&request).map_err(|e| match e {
            ClientError::Data { msg, .. } => ClientError::data(&caption.image_id, msg),
            other => other,
        })
    }

    /// One detector request per query; results filtered at the configured
    /// score threshold and clamped to the image.
    pub fn fetch_detections(&self, image: &ImageRef, queries: &[String]) -> Result<DetectionSet, ClientError> {
        self.expect_role(Role::Detector)?;
        if queries.is_empty() {
            return Err(ClientError::Contract("detector queries must be non-empty".into()));
        }
        let distinct: BTreeSet<&String> = queries.iter().collect();
        if distinct.len() != queries.len() {
            return Err(ClientError::Contract("detector queries must be deduplicated".into()));
        }
        let threshold = self.cfg.score_threshold;
        let (w, h) = (f64::from(image.width), f64::from(image.height));
        let mut set = DetectionSet::new(image.image_id.clone(), threshold);
        for query in queries {
            let request = Request::Detector {
                model: self.cfg.model_name.clone(),
                image_id: image.image_id.clone(),
                image_uri: image.uri.clone(),
                query: query.clone(),
                params: self.cfg.params.clone(),
            };
            let body = self.send(&request)?;
            let raw: Vec<Detection> = serde_json::from_str(&body)
                .map_err(|e| ClientError::data(&image.image_id, format!("bad detector response for `{query}`: {e}")))?;
            let mut kept = Vec::new();
            for mut d in raw {
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(ClientError::data(&image.image_id, format!("score {} outside [0,1]", d.score)));
                }
                if d.score < threshold {
                    continue;
                }
                if !d.bbox.within(w, h) {
                    let clamped = d.bbox.clamped(w, h);
                    self.warn(format!(
                        "{}: box for `{query}` outside {}x{} image clamped from {:?} to {:?}",
                        image.image_id, image.width, image.height, d.bbox, clamped
                    ));
                    d.bbox = clamped;
                }
                if !d.bbox.is_valid() {
                    self.warn(format!("{}: degenerate box for `{query}` dropped", image.image_id));
                    continue;
                }
                kept.push(d);
            }
            set.entries.insert(query.clone(), kept);
        }
        Ok(set)
    }
}
