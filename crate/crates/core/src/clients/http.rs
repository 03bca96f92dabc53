//! HTTP backends.
//!
//! Captioner and extractor speak a chat-completion style endpoint: one user
//! message in, `choices[0].message.content` out. The captioner attaches the
//! image URI as an `image_url` content part.
//!
//! The detector endpoint takes `{"model", "image", "query", ...params}` and
//! answers `{"detections": [{"box": [x_min, y_min, x_max, y_max], "score": s}]}`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use serde_json::{json, Map, Value};
use ureq::Agent;

use super::{Backend, BackendConfig, ClientError, Request};
use crate::datamodel::Detection;
use crate::BBox64;

static HTTP_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of HTTP requests started by these backends.
pub fn http_requests_issued() -> u64 {
    HTTP_REQUESTS.load(Ordering::SeqCst)
}

fn agent(cfg: &BackendConfig) -> Agent {
    Agent::config_builder().timeout_global(Some(cfg.timeout())).http_status_as_error(false).build().into()
}

fn bearer(cfg: &BackendConfig) -> Option<String> {
    let var = cfg.api_key_env.as_deref()?;
    std::env::var(var).ok().filter(|v| !v.is_empty())
}

fn post_json(agent: &Agent, url: &str, token: Option<&str>, body: &Value) -> Result<String, ClientError> {
    HTTP_REQUESTS.fetch_add(1, Ordering::SeqCst);
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let mut resp = req.send_json(body).map_err(|e| ClientError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| ClientError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(ClientError::Status { status, body: text });
    }
    Ok(text)
}

fn with_params(mut body: Map<String, Value>, params: &std::collections::BTreeMap<String, Value>) -> Value {
    for (k, v) in params {
        body.entry(k.clone()).or_insert_with(|| v.clone());
    }
    Value::Object(body)
}

fn check_endpoint(cfg: &BackendConfig) -> Result<(), ClientError> {
    if cfg.endpoint_url.trim().is_empty() {
        return Err(ClientError::Config(format!("{}: endpoint_url is required for an HTTP backend", cfg.role)));
    }
    Ok(())
}

/// Chat-completion backend for the captioner and extractor roles.
#[derive(Debug)]
pub struct HttpChatBackend {
    url: String,
    token: Option<String>,
    agent: Agent,
}

impl HttpChatBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, ClientError> {
        check_endpoint(cfg)?;
        Ok(Self { url: cfg.endpoint_url.clone(), token: bearer(cfg), agent: agent(cfg) })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl Backend for HttpChatBackend {
    fn call(&self, request: &Request) -> Result<String, ClientError> {
        let (model, content, params) = match request {
            Request::Captioner { model, image_uri, prompt, params, .. } => (
                model,
                json!([
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": image_uri}},
                ]),
                params,
            ),
            Request::Extractor { model, prompt, params } => (model, json!(prompt), params),
            Request::Detector { .. } => {
                return Err(ClientError::Contract("chat backend cannot serve detector requests".into()))
            }
        };
        let mut body = Map::new();
        body.insert("model".into(), json!(model));
        body.insert("messages".into(), json!([{"role": "user", "content": content}]));
        let text = post_json(&self.agent, &self.url, self.token.as_deref(), &with_params(body, params))?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("unparseable chat response: {e}")))?;
        Ok(parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }
}

/// Open-vocabulary detector backend.
#[derive(Debug)]
pub struct HttpDetectorBackend {
    url: String,
    token: Option<String>,
    agent: Agent,
}

impl HttpDetectorBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, ClientError> {
        check_endpoint(cfg)?;
        Ok(Self { url: cfg.endpoint_url.clone(), token: bearer(cfg), agent: agent(cfg) })
    }
}

#[derive(Deserialize)]
struct DetectorResponse {
    detections: Vec<WireDetection>,
}

#[derive(Deserialize)]
struct WireDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

impl Backend for HttpDetectorBackend {
    fn call(&self, request: &Request) -> Result<String, ClientError> {
        let Request::Detector { model, image_uri, query, params, .. } = request else {
            return Err(ClientError::Contract("detector backend serves detector requests only".into()));
        };
        let mut body = Map::new();
        body.insert("model".into(), json!(model));
        body.insert("image".into(), json!(image_uri));
        body.insert("query".into(), json!(query));
        let text = post_json(&self.agent, &self.url, self.token.as_deref(), &with_params(body, params))?;
        let parsed: DetectorResponse = serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("unparseable detector response: {e}")))?;
        let dets: Vec<Detection> = parsed
            .detections
            .into_iter()
            .map(|d| Detection { bbox: BBox64::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]), score: d.score })
            .collect();
        Ok(serde_json::to_string(&dets).expect("detections serialize"))
    }
}
