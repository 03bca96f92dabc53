//! Hallucination checking: extracted mentions against grounded counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{CaptionRecord, CountDiscrepancy, DetectionSet, DiagnosisReport, EntityMention, Quantity};
use crate::grounding::{count_instances, pair_query, plan_detection_queries};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosisError {
    #[error("detections for `{image_id}` miss planned queries: {}", missing.join(", "))]
    Coverage { image_id: String, missing: Vec<String> },
    #[error("caption is for `{caption}` but detections are for `{detections}`")]
    ImageMismatch { caption: String, detections: String },
    #[error("reports mix model tags `{0}` and `{1}`")]
    MixedModelTag(String, String),
    #[error("profile file line {line}: {msg}")]
    ProfileFormat { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectVerdict {
    Verified,
    Hallucinated,
    CountDiscrepancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeVerdict {
    Verified,
    Hallucinated,
    /// The object itself was not detected, so its attribute is not judged.
    Undecidable,
}

/// Mentioned quantity vs detected count.
///
/// Nothing detected for a claimed object is a hallucination. An unspecified
/// plural is only a presence claim, so any detection verifies it; an exact
/// claim must match the detected count.
pub fn check_object(mentioned: Quantity, detected: u32) -> ObjectVerdict {
    match (mentioned, detected) {
        (m, 0) if m.is_present() => ObjectVerdict::Hallucinated,
        (Quantity::UnspecifiedPlural, _) => ObjectVerdict::Verified,
        (Quantity::Exact { n }, d) if n == d => ObjectVerdict::Verified,
        _ => ObjectVerdict::CountDiscrepancy,
    }
}

/// An attribute is hallucinated when its object is detected but the
/// `"{attribute} {object}"` pair is not.
pub fn check_attribute(object_detected: u32, pair_detected: u32) -> AttributeVerdict {
    match (object_detected, pair_detected) {
        (0, _) => AttributeVerdict::Undecidable,
        (_, 0) => AttributeVerdict::Hallucinated,
        _ => AttributeVerdict::Verified,
    }
}

/// Classify every mentioned object and attribute of one caption.
///
/// Mentions are grouped by object name with quantities summed; attributes
/// are grouped per `(object, attribute)` pair and judged only for objects
/// that were detected at all.
pub fn diagnose_image(
    caption: &CaptionRecord,
    mentions: &[EntityMention],
    det: &DetectionSet,
) -> Result<DiagnosisReport, DiagnosisError> {
    if caption.image_id != det.image_id {
        return Err(DiagnosisError::ImageMismatch {
            caption: caption.image_id.clone(),
            detections: det.image_id.clone(),
        });
    }
    let missing: Vec<String> =
        plan_detection_queries(mentions).into_iter().filter(|q| !det.entries.contains_key(q)).collect();
    if !missing.is_empty() {
        return Err(DiagnosisError::Coverage { image_id: det.image_id.clone(), missing });
    }

    let mut objects: BTreeMap<&str, Quantity> = BTreeMap::new();
    let mut attributes: BTreeMap<(&str, &str), Quantity> = BTreeMap::new();
    for m in mentions {
        objects.entry(&m.object).and_modify(|q| *q = q.combine(m.quantity)).or_insert(m.quantity);
        if let Some(attr) = &m.attribute {
            attributes.entry((&m.object, attr)).and_modify(|q| *q = q.combine(m.quantity)).or_insert(m.quantity);
        }
    }

    let mut report = DiagnosisReport::empty(caption.image_id.clone(), caption.model_tag.clone());
    let count = |q: &str| count_instances(det, q).expect("coverage checked above");
    for (&object, &quantity) in &objects {
        let detected = count(object);
        let mention = EntityMention::new(object, None, quantity);
        match check_object(quantity, detected) {
            ObjectVerdict::Verified => report.verified_objects.push(mention),
            ObjectVerdict::Hallucinated => report.hallucinated_objects.push(mention),
            ObjectVerdict::CountDiscrepancy => {
                report.count_discrepancies.push(CountDiscrepancy { mention, detected_count: detected })
            }
        }
    }
    for (&(object, attr), &quantity) in &attributes {
        let mention = EntityMention::new(object, Some(attr), quantity);
        match check_attribute(count(object), count(&pair_query(attr, object))) {
            AttributeVerdict::Verified => report.verified_attributes.push(mention),
            AttributeVerdict::Hallucinated => report.hallucinated_attributes.push(mention),
            AttributeVerdict::Undecidable => {}
        }
    }
    Ok(report)
}

/// Corpus-level frequency of hallucinated object names for one model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationProfile {
    pub model_tag: String,
    /// Number of images on which each object was diagnosed hallucinated.
    pub counts: BTreeMap<String, u64>,
    pub corpus_size: u64,
}

impl HallucinationProfile {
    pub fn new(model_tag: impl Into<String>) -> Self {
        Self { model_tag: model_tag.into(), counts: BTreeMap::new(), corpus_size: 0 }
    }

    /// Add one image's report; each object counts once per image.
    pub fn add(&mut self, report: &DiagnosisReport) {
        let mut names: Vec<&str> = report.hallucinated_objects.iter().map(|m| m.object.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        for name in names {
            *self.counts.entry(name.to_string()).or_insert(0) += 1;
        }
        self.corpus_size += 1;
    }

    /// Combine partial profiles of the same model.
    pub fn merge(mut self, other: HallucinationProfile) -> Result<Self, DiagnosisError> {
        if self.model_tag.is_empty() {
            self.model_tag = other.model_tag.clone();
        } else if !other.model_tag.is_empty() && other.model_tag != self.model_tag {
            return Err(DiagnosisError::MixedModelTag(self.model_tag, other.model_tag));
        }
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self.corpus_size += other.corpus_size;
        Ok(self)
    }

    /// Objects by frequency descending, ties by name ascending.
    pub fn ranked(&self) -> Vec<(&str, u64)> {
        let mut rows: Vec<(&str, u64)> = self.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    /// Ranked table: two `#` header lines, then `rank\tobject\tcount`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# model_tag: {}", self.model_tag);
        let _ = writeln!(out, "# corpus_size: {}", self.corpus_size);
        out.push_str("rank\tobject\tcount\n");
        for (i, (name, count)) in self.ranked().into_iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", i + 1, name, count);
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self, DiagnosisError> {
        let mut profile = Self::new("");
        let bad = |line: usize, msg: &str| DiagnosisError::ProfileFormat { line, msg: msg.to_string() };
        for (idx, line) in text.lines().enumerate() {
            let n = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest.split_once(':').ok_or_else(|| bad(n, "header without `:`"))?;
                match key.trim() {
                    "model_tag" => profile.model_tag = value.trim().to_string(),
                    "corpus_size" => {
                        profile.corpus_size = value.trim().parse().map_err(|_| bad(n, "corpus_size not an integer"))?
                    }
                    _ => {}
                }
                continue;
            }
            if line.starts_with("rank\t") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(n, "expected rank, object, count"));
            }
            let count: u64 = cols[2].trim().parse().map_err(|_| bad(n, "count not an integer"))?;
            if count == 0 {
                return Err(bad(n, "count must be at least 1"));
            }
            if profile.counts.insert(cols[1].trim().to_string(), count).is_some() {
                return Err(bad(n, "duplicate object"));
            }
        }
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, DiagnosisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DiagnosisError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_table(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DiagnosisError> {
        std::fs::write(path, self.to_table())
            .map_err(|e| DiagnosisError::Io { path: path.display().to_string(), msg: e.to_string() })
    }
}

/// Fold reports of one model into its hallucination profile.
pub fn aggregate_corpus(reports: &[DiagnosisReport]) -> Result<HallucinationProfile, DiagnosisError> {
    let Some(first) = reports.first() else {
        return Ok(HallucinationProfile::new(""));
    };
    if let Some(other) = reports.iter().find(|r| r.model_tag != first.model_tag) {
        return Err(DiagnosisError::MixedModelTag(first.model_tag.clone(), other.model_tag.clone()));
    }
    let mut profile = HallucinationProfile::new(first.model_tag.clone());
    for r in reports {
        profile.add(r);
    }
    Ok(profile)
}
