//! Record types shared by every pipeline stage, their invariant checks and
//! line-delimited JSON storage.
//!
//! Every top-level record keeps fields it does not know about in `extra`, so
//! fixture corpora can carry debug metadata through a read/write cycle.

mod jsonl;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grounding::{Region, Relation};
use crate::BBox64;

pub use jsonl::{read_jsonl, read_jsonl_str, to_jsonl_string, write_jsonl, JsonlError, Record};
pub use validate::{duplicate_ids, Validate};

/// Fields not named by a record type, preserved verbatim.
pub type Extra = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ImageRef {
    pub fn new(image_id: impl Into<String>, uri: impl Into<String>, width: u32, height: u32) -> Self {
        Self { image_id: image_id.into(), uri: uri.into(), width, height, extra: Extra::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub model_tag: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Extra,
}

impl CaptionRecord {
    pub fn new(image_id: impl Into<String>, model_tag: impl Into<String>, text: impl Into<String>) -> Self {
        Self { image_id: image_id.into(), model_tag: model_tag.into(), text: text.into(), extra: Extra::new() }
    }
}

/// How many instances a caption claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantity {
    Exact { n: u32 },
    /// A plural with no stated number ("several", "some", bare plurals).
    UnspecifiedPlural,
}

impl Quantity {
    pub const ONE: Quantity = Quantity::Exact { n: 1 };

    pub fn exact(n: u32) -> Self {
        Quantity::Exact { n }
    }

    /// Sum of two claims; any unspecified plural makes the sum a presence claim.
    pub fn combine(self, other: Quantity) -> Quantity {
        match (self, other) {
            (Quantity::Exact { n: a }, Quantity::Exact { n: b }) => Quantity::Exact { n: a + b },
            _ => Quantity::UnspecifiedPlural,
        }
    }

    /// Whether the claim asserts at least one instance.
    pub fn is_present(self) -> bool {
        match self {
            Quantity::Exact { n } => n > 0,
            Quantity::UnspecifiedPlural => true,
        }
    }
}

/// One `{object, attribute, quantity}` triplet extracted from a caption.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub quantity: Quantity,
    /// Character offsets `(start, end)` into the caption text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl EntityMention {
    pub fn new(object: impl Into<String>, attribute: Option<&str>, quantity: Quantity) -> Self {
        Self { object: object.into(), attribute: attribute.map(str::to_string), quantity, span: None }
    }

    pub fn with_span(mut self, start: usize, end: usize) -> Self {
        self.span = Some((start, end));
        self
    }

    pub fn key(&self) -> (&str, Option<&str>) {
        (&self.object, self.attribute.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox64,
    pub score: f64,
}

/// Open-vocabulary detection results for one image, one entry per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub entries: BTreeMap<String, Vec<Detection>>,
    pub score_threshold_used: f64,
    #[serde(flatten)]
    pub extra: Extra,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, score_threshold_used: f64) -> Self {
        Self { image_id: image_id.into(), entries: BTreeMap::new(), score_threshold_used, extra: Extra::new() }
    }

    /// Highest-scoring detection for `query`; ties keep the earliest.
    pub fn best(&self, query: &str) -> Option<&Detection> {
        self.entries.get(query)?.iter().fold(None, |best: Option<&Detection>, d| match best {
            Some(b) if b.score >= d.score => Some(b),
            _ => Some(d),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountDiscrepancy {
    pub mention: EntityMention,
    pub detected_count: u32,
}

/// Per-image hallucination verdicts for one model's caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub image_id: String,
    pub model_tag: String,
    pub verified_objects: Vec<EntityMention>,
    pub hallucinated_objects: Vec<EntityMention>,
    pub verified_attributes: Vec<EntityMention>,
    pub hallucinated_attributes: Vec<EntityMention>,
    pub count_discrepancies: Vec<CountDiscrepancy>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl DiagnosisReport {
    pub fn empty(image_id: impl Into<String>, model_tag: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            model_tag: model_tag.into(),
            verified_objects: Vec::new(),
            hallucinated_objects: Vec::new(),
            verified_attributes: Vec::new(),
            hallucinated_attributes: Vec::new(),
            count_discrepancies: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.verified_objects.is_empty()
            && self.hallucinated_objects.is_empty()
            && self.verified_attributes.is_empty()
            && self.hallucinated_attributes.is_empty()
            && self.count_discrepancies.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    Existence,
    Attribute,
    Position,
    Relation,
}

impl SampleType {
    pub const ALL: [SampleType; 4] =
        [SampleType::Existence, SampleType::Attribute, SampleType::Position, SampleType::Relation];

    pub fn as_str(self) -> &'static str {
        match self {
            SampleType::Existence => "existence",
            SampleType::Attribute => "attribute",
            SampleType::Position => "position",
            SampleType::Relation => "relation",
        }
    }
}

impl fmt::Display for SampleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SampleType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "existence" => Ok(SampleType::Existence),
            "attribute" => Ok(SampleType::Attribute),
            "position" => Ok(SampleType::Position),
            "relation" => Ok(SampleType::Relation),
            other => Err(format!("unknown sample type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn answer_prefix(self) -> &'static str {
        match self {
            Polarity::Positive => "Yes",
            Polarity::Negative => "No",
        }
    }
}

/// What a generated sample was built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    /// Region or relation phrase the question actually asks about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BBox64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

/// One generated question/answer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub image_id: String,
    pub sample_type: SampleType,
    pub polarity: Polarity,
    pub question: String,
    pub answer: String,
    pub source: Provenance,
    pub seed_tag: u64,
    #[serde(flatten)]
    pub extra: Extra,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantity_wire_shape() {
        assert_eq!(serde_json::to_string(&Quantity::exact(2)).unwrap(), r#"{"kind":"exact","n":2}"#);
        assert_eq!(
            serde_json::to_string(&Quantity::UnspecifiedPlural).unwrap(),
            r#"{"kind":"unspecified_plural"}"#
        );
    }

    #[test]
    fn detection_uses_box_field_name() {
        let d = Detection { bbox: BBox64::new(1.0, 2.0, 3.0, 4.0), score: 0.5 };
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.starts_with(r#"{"box":{"x_min":1.0"#), "{s}");
    }

    #[test]
    fn unknown_fields_survive() {
        let line = r#"{"image_id":"a","uri":"a.jpg","width":4,"height":3,"debug":{"k":[1,2]}}"#;
        let img: ImageRef = serde_json::from_str(line).unwrap();
        assert_eq!(img.extra["debug"]["k"][1], 2);
        assert_eq!(serde_json::to_string(&img).unwrap(), line);
    }

    #[test]
    fn best_detection_prefers_score() {
        let mut det = DetectionSet::new("a", 0.3);
        let b = BBox64::new(0.0, 0.0, 1.0, 1.0);
        det.entries.insert(
            "dog".into(),
            vec![Detection { bbox: b, score: 0.4 }, Detection { bbox: b.scaled(2.0), score: 0.9 }],
        );
        assert_eq!(det.best("dog").unwrap().score, 0.9);
        assert!(det.best("cat").is_none());
    }

    #[test]
    fn quantity_combination() {
        assert_eq!(Quantity::exact(2).combine(Quantity::ONE), Quantity::exact(3));
        assert_eq!(Quantity::ONE.combine(Quantity::UnspecifiedPlural), Quantity::UnspecifiedPlural);
    }
}
