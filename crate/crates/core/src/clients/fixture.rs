use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{prompt_digest, Backend, ClientError, Request};
use crate::datamodel::{read_jsonl, CaptionRecord, Detection, DetectionSet, JsonlError, Record};

/// Stored extractor response, keyed by [`prompt_digest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFixture {
    pub prompt_digest: String,
    pub response: String,
}

impl Record for ExtractionFixture {
    const KIND: &'static str = "extraction fixture";
    type Key = String;

    fn sort_key(&self) -> String {
        self.prompt_digest.clone()
    }
}

/// Offline backend answering from stored responses. Never touches the network.
///
/// A fixture directory holds `captions.jsonl` (caption records keyed by
/// `(model_tag, image_id)`), `extractions.jsonl` and `detections.jsonl`
/// (unfiltered detection sets); any of them may be absent. A detector query
/// missing for a known image answers with no boxes.
#[derive(Debug, Default)]
pub struct FixtureStore {
    captions: BTreeMap<(String, String), String>,
    extractions: BTreeMap<String, String>,
    detections: BTreeMap<String, BTreeMap<String, Vec<Detection>>>,
    calls: AtomicUsize,
}

fn read_optional<R: Record>(path: &Path) -> Result<Vec<R>, JsonlError> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load_dir(dir: &Path) -> Result<Self, JsonlError> {
        let mut store = Self::new();
        for c in read_optional::<CaptionRecord>(&dir.join("captions.jsonl"))? {
            store.insert_caption(&c.model_tag, &c.image_id, &c.text);
        }
        for e in read_optional::<ExtractionFixture>(&dir.join("extractions.jsonl"))? {
            store.extractions.insert(e.prompt_digest, e.response);
        }
        for d in read_optional::<DetectionSet>(&dir.join("detections.jsonl"))? {
            store.insert_detection_set(d);
        }
        Ok(store)
    }

    pub fn insert_caption(&mut self, model_tag: &str, image_id: &str, text: &str) {
        self.captions.insert((model_tag.to_string(), image_id.to_string()), text.to_string());
    }

    pub fn insert_extraction(&mut self, prompt: &str, response: &str) {
        self.extractions.insert(prompt_digest(prompt), response.to_string());
    }

    pub fn insert_detections(&mut self, image_id: &str, query: &str, dets: Vec<Detection>) {
        self.detections.entry(image_id.to_string()).or_default().insert(query.to_string(), dets);
    }

    pub fn insert_detection_set(&mut self, set: DetectionSet) {
        let entry = self.detections.entry(set.image_id).or_default();
        entry.extend(set.entries);
    }

    /// Number of requests answered (or refused) so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for FixtureStore {
    fn call(&self, request: &Request) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match request {
            Request::Captioner { model, image_id, .. } => self
                .captions
                .get(&(model.clone(), image_id.clone()))
                .cloned()
                .ok_or_else(|| ClientError::Data {
                    image_id: image_id.clone(),
                    msg: format!("no fixture caption for model `{model}`"),
                }),
            Request::Extractor { prompt, .. } => {
                let digest = prompt_digest(prompt);
                self.extractions.get(&digest).cloned().ok_or_else(|| ClientError::Data {
                    image_id: String::new(),
                    msg: format!("no fixture extraction for prompt digest {digest}"),
                })
            }
            Request::Detector { image_id, query, .. } => {
                let per_image = self.detections.get(image_id).ok_or_else(|| ClientError::Data {
                    image_id: image_id.clone(),
                    msg: "no fixture detections for image".into(),
                })?;
                let dets = per_image.get(query).cloned().unwrap_or_default();
                Ok(serde_json::to_string(&dets).expect("detections serialize"))
            }
        }
    }
}
