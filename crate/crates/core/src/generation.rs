//! Targeted instruction samples from a diagnosis report.
//!
//! Existence and attribute samples restate the verdicts directly: verified
//! facts become positives, diagnosed hallucinations become negatives.
//! Position and relation samples come in positive/negative pairs built from
//! the detector boxes of verified single-instance objects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{
    DetectionSet, DiagnosisReport, ImageRef, InstructionSample, Polarity, Provenance, Record, SampleType,
};
use crate::grounding::{locate_region, pairwise_relation, Region, Relation, DEFAULT_RELATION_DELTA, GRID_LABEL};

const DEFAULT_TEMPLATES: &str = include_str!("../../../config/templates.txt");

const TEMPLATE_KEYS: [&str; 12] = [
    "existence.question",
    "existence.positive",
    "existence.negative",
    "attribute.question",
    "attribute.positive",
    "attribute.negative",
    "position.question",
    "position.positive",
    "position.negative",
    "relation.question",
    "relation.positive",
    "relation.negative",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("`{object}` has {count} detections; position samples need exactly one")]
    MultiInstance { object: String, count: usize },
    #[error("no detections recorded for `{0}`")]
    NoReferent(String),
    #[error("report is for `{report}` but detections are for `{detections}`")]
    ImageMismatch { report: String, detections: String },
    #[error("generation config: {0}")]
    Config(String),
    #[error("template file line {line}: {msg}")]
    Template { line: usize, msg: String },
    #[error(transparent)]
    Grounding(#[from] crate::grounding::GroundingError),
}

/// Question/answer templates keyed `type.question`, `type.positive`,
/// `type.negative`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, GenerationError> {
        let mut templates = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GenerationError::Template { line: idx + 1, msg: "expected `key = template`".into() })?;
            let key = k.trim();
            if !TEMPLATE_KEYS.contains(&key) {
                return Err(GenerationError::Template { line: idx + 1, msg: format!("unknown key `{key}`") });
            }
            templates.insert(key.to_string(), v.trim().to_string());
        }
        if let Some(missing) = TEMPLATE_KEYS.iter().find(|k| !templates.contains_key(**k)) {
            return Err(GenerationError::Template { line: 0, msg: format!("missing key `{missing}`") });
        }
        Ok(Self { templates })
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenerationError::Template { line: 0, msg: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    fn fill(&self, key: &str, slots: &[(&str, &str)]) -> String {
        let mut out = self.templates[key].clone();
        for (name, value) in slots {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub enabled_types: BTreeSet<SampleType>,
    pub seed: u64,
    pub max_samples_per_image: Option<usize>,
    /// Dead zone for relations, fraction of image size.
    pub delta: f64,
    pub grid: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            enabled_types: SampleType::ALL.into_iter().collect(),
            seed: 0,
            max_samples_per_image: None,
            delta: DEFAULT_RELATION_DELTA,
            grid: GRID_LABEL.to_string(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.enabled_types.is_empty() {
            v.push("enabled_types non-empty violated".to_string());
        }
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            v.push("delta in [0,1) violated".to_string());
        }
        if self.grid != GRID_LABEL {
            v.push(format!("grid `{}` unsupported (only {GRID_LABEL})", self.grid));
        }
        v
    }
}

/// Per-image RNG: the run seed mixed with the image id, so results do not
/// depend on processing order.
pub fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Builds samples for one image.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    templates: &'a TemplateSet,
    image_id: String,
    seed_tag: u64,
}

impl<'a> Generator<'a> {
    pub fn new(templates: &'a TemplateSet, image_id: impl Into<String>, seed_tag: u64) -> Self {
        Self { templates, image_id: image_id.into(), seed_tag }
    }

    fn sample(
        &self,
        sample_type: SampleType,
        polarity: Polarity,
        question: String,
        answer: String,
        source: Provenance,
    ) -> InstructionSample {
        InstructionSample {
            image_id: self.image_id.clone(),
            sample_type,
            polarity,
            question,
            answer,
            source,
            seed_tag: self.seed_tag,
            extra: Default::default(),
        }
    }

    pub fn existence(&self, object: &str, hallucinated: bool) -> InstructionSample {
        let slots = [("object", object)];
        let polarity = if hallucinated { Polarity::Negative } else { Polarity::Positive };
        let answer_key = if hallucinated { "existence.negative" } else { "existence.positive" };
        self.sample(
            SampleType::Existence,
            polarity,
            self.templates.fill("existence.question", &slots),
            self.templates.fill(answer_key, &slots),
            Provenance { entities: vec![object.to_string()], ..Default::default() },
        )
    }

    pub fn attribute(&self, object: &str, attribute: &str, hallucinated: bool) -> InstructionSample {
        let slots = [("object", object), ("attribute", attribute)];
        let polarity = if hallucinated { Polarity::Negative } else { Polarity::Positive };
        let answer_key = if hallucinated { "attribute.negative" } else { "attribute.positive" };
        self.sample(
            SampleType::Attribute,
            polarity,
            self.templates.fill("attribute.question", &slots),
            self.templates.fill(answer_key, &slots),
            Provenance {
                entities: vec![object.to_string()],
                attribute: Some(attribute.to_string()),
                ..Default::default()
            },
        )
    }

    /// A true statement about the object's grid cell and a false one about a
    /// cell drawn uniformly from the other eight.
    pub fn position<R: Rng>(
        &self,
        object: &str,
        region: Region,
        provenance: Provenance,
        rng: &mut R,
    ) -> (InstructionSample, InstructionSample) {
        let others: Vec<Region> = Region::ALL.into_iter().filter(|r| *r != region).collect();
        let wrong = others[rng.random_range(0..others.len())];
        let truth = region.phrase();
        let base = Provenance { entities: vec![object.to_string()], region: Some(region), ..provenance };

        let pos_slots = [("object", object), ("region", truth), ("true_region", truth)];
        let pos = self.sample(
            SampleType::Position,
            Polarity::Positive,
            self.templates.fill("position.question", &pos_slots),
            self.templates.fill("position.positive", &pos_slots),
            Provenance { asked: Some(truth.to_string()), ..base.clone() },
        );
        let neg_slots = [("object", object), ("region", wrong.phrase()), ("true_region", truth)];
        let neg = self.sample(
            SampleType::Position,
            Polarity::Negative,
            self.templates.fill("position.question", &neg_slots),
            self.templates.fill("position.negative", &neg_slots),
            Provenance { asked: Some(wrong.phrase().to_string()), ..base },
        );
        (pos, neg)
    }

    /// The relation as stated, and its contradiction (same participants,
    /// inverse direction) as the negative.
    pub fn relation(&self, rel: &Relation, provenance: Provenance) -> (InstructionSample, InstructionSample) {
        let truth = rel.kind.phrase();
        let wrong = rel.kind.inverse().phrase();
        let base = Provenance {
            entities: vec![rel.subject.clone(), rel.object.clone()],
            relation: Some(rel.clone()),
            ..provenance
        };
        let pos_slots =
            [("subject", rel.subject.as_str()), ("object", rel.object.as_str()), ("phrase", truth), ("true_phrase", truth)];
        let pos = self.sample(
            SampleType::Relation,
            Polarity::Positive,
            self.templates.fill("relation.question", &pos_slots),
            self.templates.fill("relation.positive", &pos_slots),
            Provenance { asked: Some(truth.to_string()), ..base.clone() },
        );
        let neg_slots =
            [("subject", rel.subject.as_str()), ("object", rel.object.as_str()), ("phrase", wrong), ("true_phrase", truth)];
        let neg = self.sample(
            SampleType::Relation,
            Polarity::Negative,
            self.templates.fill("relation.question", &neg_slots),
            self.templates.fill("relation.negative", &neg_slots),
            Provenance { asked: Some(wrong.to_string()), ..base },
        );
        (pos, neg)
    }
}

/// The box of an object's single detection, or why there is none.
pub fn single_referent(det: &DetectionSet, object: &str) -> Result<crate::BBox64, GenerationError> {
    let dets = det.entries.get(object).ok_or_else(|| GenerationError::NoReferent(object.to_string()))?;
    match dets.len() {
        1 => Ok(dets[0].bbox),
        0 => Err(GenerationError::NoReferent(object.to_string())),
        count => Err(GenerationError::MultiInstance { object: object.to_string(), count }),
    }
}

/// All samples for one image, in canonical record order.
///
/// When `max_samples_per_image` is set the list is cut by type priority:
/// existence, attribute, position, relation.
pub fn build_dataset(
    report: &DiagnosisReport,
    det: &DetectionSet,
    image: &ImageRef,
    templates: &TemplateSet,
    cfg: &GenerationConfig,
) -> Result<Vec<InstructionSample>, GenerationError> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(GenerationError::Config(problems.join("; ")));
    }
    if report.image_id != det.image_id || report.image_id != image.image_id {
        return Err(GenerationError::ImageMismatch { report: report.image_id.clone(), detections: det.image_id.clone() });
    }
    let gen = Generator::new(templates, report.image_id.clone(), cfg.seed);
    let mut rng = image_rng(cfg.seed, &report.image_id);
    let enabled = |t: SampleType| cfg.enabled_types.contains(&t);
    let mut by_type: BTreeMap<SampleType, Vec<InstructionSample>> = BTreeMap::new();

    if enabled(SampleType::Existence) {
        let out = by_type.entry(SampleType::Existence).or_default();
        out.extend(report.verified_objects.iter().map(|m| gen.existence(&m.object, false)));
        out.extend(report.hallucinated_objects.iter().map(|m| gen.existence(&m.object, true)));
    }
    if enabled(SampleType::Attribute) {
        let out = by_type.entry(SampleType::Attribute).or_default();
        for m in &report.verified_attributes {
            out.push(gen.attribute(&m.object, m.attribute.as_deref().unwrap_or_default(), false));
        }
        for m in &report.hallucinated_attributes {
            out.push(gen.attribute(&m.object, m.attribute.as_deref().unwrap_or_default(), true));
        }
    }

    // verified objects with exactly one detection, in name order
    let mut anchored: Vec<(&str, crate::BBox64)> = Vec::new();
    if enabled(SampleType::Position) || enabled(SampleType::Relation) {
        for m in &report.verified_objects {
            match single_referent(det, &m.object) {
                Ok(b) => anchored.push((&m.object, b)),
                Err(e) => log::debug!("{}: {e}", report.image_id),
            }
        }
        anchored.sort_by(|a, b| a.0.cmp(b.0));
    }
    if enabled(SampleType::Position) {
        let out = by_type.entry(SampleType::Position).or_default();
        for (object, bbox) in &anchored {
            let region = locate_region(bbox, image)?;
            let prov = Provenance { boxes: Some(vec![*bbox]), grid: Some(cfg.grid.clone()), ..Default::default() };
            let (p, n) = gen.position(object, region, prov, &mut rng);
            out.extend([p, n]);
        }
    }
    if enabled(SampleType::Relation) {
        let out = by_type.entry(SampleType::Relation).or_default();
        for (i, (a, abox)) in anchored.iter().enumerate() {
            for (b, bbox) in &anchored[i + 1..] {
                if let Some(rel) = pairwise_relation((a, abox), (b, bbox), image, cfg.delta)? {
                    let prov =
                        Provenance { boxes: Some(vec![*abox, *bbox]), delta: Some(cfg.delta), ..Default::default() };
                    let (p, n) = gen.relation(&rel, prov);
                    out.extend([p, n]);
                }
            }
        }
    }

    let mut samples: Vec<InstructionSample> = by_type.into_values().flatten().collect();
    if let Some(max) = cfg.max_samples_per_image {
        samples.truncate(max);
    }
    samples.sort_by_key(|s| s.sort_key());
    Ok(samples)
}

/// Positive/negative counts per sample type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolaritySummary {
    pub counts: BTreeMap<SampleType, (usize, usize)>,
}

impl PolaritySummary {
    pub fn of(samples: &[InstructionSample]) -> Self {
        let mut counts: BTreeMap<SampleType, (usize, usize)> = BTreeMap::new();
        for s in samples {
            let e = counts.entry(s.sample_type).or_default();
            match s.polarity {
                Polarity::Positive => e.0 += 1,
                Polarity::Negative => e.1 += 1,
            }
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().map(|(p, n)| p + n).sum()
    }
}

impl fmt::Display for PolaritySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>8}", "type", "pos", "neg", "total")?;
        for t in SampleType::ALL {
            let (p, n) = self.counts.get(&t).copied().unwrap_or_default();
            writeln!(f, "{:<10} {:>8} {:>8} {:>8}", t.as_str(), p, n, p + n)?;
        }
        let (p, n) = self.counts.values().fold((0, 0), |acc, (p, n)| (acc.0 + p, acc.1 + n));
        write!(f, "{:<10} {:>8} {:>8} {:>8}", "all", p, n, p + n)
    }
}
