use std::collections::{BTreeMap, BTreeSet};

use super::{
    CaptionRecord, Detection, DetectionSet, DiagnosisReport, EntityMention, ImageRef, InstructionSample, Polarity,
    Quantity,
};
use crate::BBox64;

/// Invariant check returning one human-readable entry per broken rule.
///
/// Violations are values, not errors: an empty list means the record is
/// well-formed.
pub trait Validate {
    fn validate(&self) -> Vec<String>;
}

impl Validate for BBox64 {
    fn validate(&self) -> Vec<String> {
        self.violations()
    }
}

impl Validate for ImageRef {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.image_id.trim().is_empty() {
            v.push("image_id non-empty violated".into());
        }
        if self.width == 0 {
            v.push("width > 0 violated".into());
        }
        if self.height == 0 {
            v.push("height > 0 violated".into());
        }
        v
    }
}

impl Validate for CaptionRecord {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.image_id.trim().is_empty() {
            v.push("image_id non-empty violated".into());
        }
        if self.text.trim().is_empty() {
            v.push("text non-empty violated".into());
        }
        v
    }
}

impl Validate for EntityMention {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.object.is_empty() {
            v.push("object non-empty violated".into());
        } else if crate::extraction::normalize_entity_name(&self.object) != self.object {
            v.push(format!("object canonical form violated (`{}`)", self.object));
        }
        if let Some(attr) = &self.attribute {
            if attr.trim().is_empty() {
                v.push("attribute non-empty when present violated".into());
            }
        }
        if self.quantity == Quantity::exact(0) {
            v.push("quantity exact(n) n >= 1 violated".into());
        }
        if let Some((start, end)) = self.span {
            if start >= end {
                v.push("span start < end violated".into());
            }
        }
        v
    }
}

impl EntityMention {
    /// Field checks plus span bounds against the caption it came from.
    pub fn validate_in(&self, caption: &str) -> Vec<String> {
        let mut v = self.validate();
        if let Some((_, end)) = self.span {
            if end > caption.chars().count() {
                v.push("span within caption bounds violated".into());
            }
        }
        v
    }
}

fn detection_violations(query: &str, d: &Detection, threshold: f64, out: &mut Vec<String>) {
    for msg in d.bbox.violations() {
        out.push(format!("entries[{query}].box: {msg}"));
    }
    if !(0.0..=1.0).contains(&d.score) {
        out.push(format!("entries[{query}].score in [0,1] violated"));
    } else if d.score < threshold {
        out.push(format!("entries[{query}].score >= score_threshold_used violated"));
    }
}

impl Validate for DetectionSet {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.image_id.trim().is_empty() {
            v.push("image_id non-empty violated".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold_used) {
            v.push("score_threshold_used in [0,1] violated".into());
        }
        for (query, dets) in &self.entries {
            for d in dets {
                detection_violations(query, d, self.score_threshold_used, &mut v);
            }
        }
        v
    }
}

impl DetectionSet {
    /// Field checks plus box-within-image bounds.
    pub fn validate_against(&self, image: &ImageRef) -> Vec<String> {
        let mut v = self.validate();
        if self.image_id != image.image_id {
            v.push("image_id matches image violated".into());
        }
        let (w, h) = (f64::from(image.width), f64::from(image.height));
        for (query, dets) in &self.entries {
            if dets.iter().any(|d| !d.bbox.within(w, h)) {
                v.push(format!("entries[{query}].box within image bounds violated"));
            }
        }
        v
    }
}

impl Validate for DiagnosisReport {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.image_id.trim().is_empty() {
            v.push("image_id non-empty violated".into());
        }
        let lists: [(&str, Vec<&EntityMention>); 5] = [
            ("verified_objects", self.verified_objects.iter().collect()),
            ("hallucinated_objects", self.hallucinated_objects.iter().collect()),
            ("verified_attributes", self.verified_attributes.iter().collect()),
            ("hallucinated_attributes", self.hallucinated_attributes.iter().collect()),
            ("count_discrepancies", self.count_discrepancies.iter().map(|c| &c.mention).collect()),
        ];
        let mut owner: BTreeMap<(&str, Option<&str>), &str> = BTreeMap::new();
        for (name, members) in &lists {
            for m in members {
                for msg in m.validate() {
                    v.push(format!("{name}: {msg}"));
                }
                if let Some(prev) = owner.insert(m.key(), name) {
                    if prev != *name {
                        v.push(format!(
                            "lists pairwise disjoint violated: ({}, {}) in {prev} and {name}",
                            m.object,
                            m.attribute.as_deref().unwrap_or("none")
                        ));
                    }
                }
            }
        }
        v
    }
}

impl Validate for InstructionSample {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.image_id.trim().is_empty() {
            v.push("image_id non-empty violated".into());
        }
        if self.question.trim().is_empty() {
            v.push("question non-empty violated".into());
        }
        if self.answer.trim().is_empty() {
            v.push("answer non-empty violated".into());
        }
        match self.polarity {
            Polarity::Negative if !self.answer.starts_with("No") => {
                v.push("polarity negative => answer begins \"No\" violated".into())
            }
            Polarity::Positive if !self.answer.starts_with("Yes") => {
                v.push("polarity positive => answer begins \"Yes\" violated".into())
            }
            _ => {}
        }
        v
    }
}

/// Keys that occur more than once, in sorted order.
pub fn duplicate_ids<'a, K: Ord + Clone + 'a>(keys: impl IntoIterator<Item = K>) -> Vec<K> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for k in keys {
        if !seen.insert(k.clone()) {
            dups.insert(k);
        }
    }
    dups.into_iter().collect()
}
