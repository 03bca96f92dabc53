//! Run configuration and the four corpus-level stages behind the `dftg`
//! subcommands. Stages read and write record files only, so each one can be
//! replayed on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{render_similarity, similarity_report, SimilarityRow, DEFAULT_RBO_P, DEFAULT_TOPKS};
use crate::clients::{
    Backend, BackendConfig, DiskCache, FixtureStore, HttpChatBackend, HttpDetectorBackend, Role, ServiceClient,
};
use crate::datamodel::{
    duplicate_ids, read_jsonl, write_jsonl, CaptionRecord, DetectionSet, DiagnosisReport, ImageRef,
    InstructionSample, SampleType, Validate,
};
use crate::diagnosis::{aggregate_corpus, diagnose_image, HallucinationProfile};
use crate::evalmetrics::{compute_binary_metrics, mme_scores, render_binary, render_mme, QARecord};
use crate::extraction::{
    build_extraction_prompt, fallback_extract, parse_extraction_response, FewShotSet, Lexicon,
};
use crate::generation::{build_dataset, GenerationConfig, PolaritySummary, TemplateSet};
use crate::grounding::plan_detection_queries;
use crate::{BinaryMetrics64, MmeScores64};

pub const DIAGNOSIS_FILE: &str = "diagnosis.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const PROFILE_FILE: &str = "profile.tsv";
pub const FAILURES_FILE: &str = "failures.tsv";
pub const INSTRUCTIONS_FILE: &str = "instructions.jsonl";

/// Environment variables consulted between the config file and flags.
pub const ENV_CAPTIONER_URL: &str = "DFTG_CAPTIONER_URL";
pub const ENV_EXTRACTOR_URL: &str = "DFTG_EXTRACTOR_URL";
pub const ENV_DETECTOR_URL: &str = "DFTG_DETECTOR_URL";
pub const ENV_PARALLELISM: &str = "DFTG_PARALLELISM";
pub const ENV_OFFLINE: &str = "DFTG_OFFLINE";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl PipelineError {
    /// Process exit code for errors that stop a stage outright.
    pub fn exit_code(&self) -> i32 {
        2
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        PipelineError::Io { path: path.display().to_string(), msg: e.to_string() }
    }
}

fn input(e: impl fmt::Display) -> PipelineError {
    PipelineError::Input(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    Llm,
    #[default]
    Fallback,
}

/// Everything a run needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub fixtures_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub parallelism: usize,
    pub extraction_mode: ExtractionMode,
    pub lexicon: Option<PathBuf>,
    pub lexicon_extras: Vec<String>,
    pub few_shot: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub captioner: BackendConfig,
    pub extractor: BackendConfig,
    pub detector: BackendConfig,
    pub generation: GenerationConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.jsonl"),
            output_dir: PathBuf::from("out"),
            fixtures_dir: None,
            cache_dir: None,
            offline: false,
            parallelism: 1,
            extraction_mode: ExtractionMode::default(),
            lexicon: None,
            lexicon_extras: Vec::new(),
            few_shot: None,
            templates: None,
            captioner: BackendConfig::new(Role::Captioner, ""),
            extractor: BackendConfig::new(Role::Extractor, ""),
            detector: BackendConfig::new(Role::Detector, ""),
            generation: GenerationConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Values given on the command line; they win over env and file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub offline: Option<bool>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub types: Option<BTreeSet<SampleType>>,
    pub max_samples_per_image: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.captioner.role = Role::Captioner;
        cfg.extractor.role = Role::Extractor;
        cfg.detector.role = Role::Detector;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Apply environment overrides read through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), PipelineError> {
        for (var, backend) in [
            (ENV_CAPTIONER_URL, &mut self.captioner),
            (ENV_EXTRACTOR_URL, &mut self.extractor),
            (ENV_DETECTOR_URL, &mut self.detector),
        ] {
            if let Some(url) = lookup(var) {
                backend.endpoint_url = url;
            }
        }
        if let Some(v) = lookup(ENV_PARALLELISM) {
            self.parallelism =
                v.trim().parse().map_err(|_| PipelineError::Config(format!("{ENV_PARALLELISM}=`{v}` is not a count")))?;
        }
        if let Some(v) = lookup(ENV_OFFLINE) {
            self.offline = match v.trim() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" | "" => false,
                other => return Err(PipelineError::Config(format!("{ENV_OFFLINE}=`{other}` is not a boolean"))),
            };
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(v) = o.offline {
            self.offline = v;
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
            // Flag paths are relative to the working directory, not the file.
            if self.output_dir.is_relative() {
                self.output_dir = std::env::current_dir().unwrap_or_default().join(v);
            }
        }
        if let Some(v) = o.seed {
            self.generation.seed = v;
        }
        if let Some(v) = &o.types {
            self.generation.enabled_types = v.clone();
        }
        if let Some(v) = o.max_samples_per_image {
            self.generation.max_samples_per_image = Some(v);
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self, file: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(file)
    }

    fn needs_extractor(&self) -> bool {
        self.extraction_mode == ExtractionMode::Llm
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut v = Vec::new();
        if self.parallelism < 1 {
            v.push("parallelism >= 1 violated".to_string());
        }
        v.extend(self.generation.validate());
        let mut backends = vec![&self.captioner, &self.detector];
        if self.needs_extractor() {
            backends.push(&self.extractor);
        }
        for b in backends {
            v.extend(b.validate());
            if !self.offline && b.endpoint_url.trim().is_empty() {
                v.push(format!("{}: endpoint_url required unless offline", b.role));
            }
        }
        if self.offline && self.fixtures_dir.is_none() {
            v.push("offline runs need fixtures_dir".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(v.join("; ")))
        }
    }

    fn load_manifest(&self) -> Result<Vec<ImageRef>, PipelineError> {
        let images: Vec<ImageRef> = read_jsonl(&self.resolve(&self.manifest)).map_err(input)?;
        let dups = duplicate_ids(images.iter().map(|i| i.image_id.as_str()));
        if !dups.is_empty() {
            return Err(PipelineError::Input(format!("duplicate image ids in manifest: {}", dups.join(", "))));
        }
        for img in &images {
            let problems = img.validate();
            if !problems.is_empty() {
                return Err(PipelineError::Input(format!("image `{}`: {}", img.image_id, problems.join("; "))));
            }
        }
        Ok(images)
    }

    fn load_lexicon(&self) -> Result<Lexicon, PipelineError> {
        let base = match &self.lexicon {
            Some(p) => Lexicon::load(&self.resolve(p)).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => Lexicon::default(),
        };
        Ok(base.with_extras(self.lexicon_extras.iter().map(String::as_str)))
    }

    fn load_few_shot(&self) -> Result<FewShotSet, PipelineError> {
        match &self.few_shot {
            Some(p) => FewShotSet::load(&self.resolve(p)).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(FewShotSet::default()),
        }
    }

    fn load_templates(&self) -> Result<TemplateSet, PipelineError> {
        match &self.templates {
            Some(p) => TemplateSet::load(&self.resolve(p)).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(TemplateSet::default()),
        }
    }
}

struct Clients {
    captioner: ServiceClient,
    extractor: Option<ServiceClient>,
    detector: ServiceClient,
}

impl Clients {
    fn build(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let cache = match &cfg.cache_dir {
            Some(dir) => {
                let dir = cfg.resolve(dir);
                Some(Arc::new(DiskCache::open(&dir).map_err(|e| PipelineError::io(&dir, e))?))
            }
            None => None,
        };
        let fixtures: Option<Arc<FixtureStore>> = if cfg.offline {
            let dir = cfg.resolve(cfg.fixtures_dir.as_deref().unwrap_or(Path::new(".")));
            Some(Arc::new(FixtureStore::load_dir(&dir).map_err(input)?))
        } else {
            None
        };
        let make = |bc: &BackendConfig| -> Result<ServiceClient, PipelineError> {
            let backend: Arc<dyn Backend> = match &fixtures {
                Some(f) => f.clone(),
                None if bc.role == Role::Detector => {
                    Arc::new(HttpDetectorBackend::new(bc).map_err(|e| PipelineError::Config(e.to_string()))?)
                }
                None => Arc::new(HttpChatBackend::new(bc).map_err(|e| PipelineError::Config(e.to_string()))?),
            };
            let client = ServiceClient::new(bc.clone(), backend).map_err(|e| PipelineError::Config(e.to_string()))?;
            Ok(match &cache {
                Some(c) => client.with_cache(c.clone()),
                None => client,
            })
        };
        Ok(Clients {
            captioner: make(&cfg.captioner)?,
            extractor: if cfg.needs_extractor() { Some(make(&cfg.extractor)?) } else { None },
            detector: make(&cfg.detector)?,
        })
    }

    fn drain_warnings(&self) -> Vec<String> {
        let mut w = self.captioner.drain_warnings();
        if let Some(e) = &self.extractor {
            w.extend(e.drain_warnings());
        }
        w.extend(self.detector.drain_warnings());
        w
    }
}

struct ImageOutcome {
    caption: CaptionRecord,
    detections: DetectionSet,
    report: DiagnosisReport,
    mentions: usize,
}

fn diagnose_one(
    cfg: &RunConfig,
    clients: &Clients,
    lexicon: &Lexicon,
    shots: &FewShotSet,
    image: &ImageRef,
) -> Result<ImageOutcome, String> {
    let caption = clients.captioner.fetch_caption(image).map_err(|e| e.to_string())?;
    let mentions = match (&cfg.extraction_mode, &clients.extractor) {
        (ExtractionMode::Llm, Some(extractor)) => {
            let prompt = build_extraction_prompt(&caption, shots).map_err(|e| e.to_string())?;
            let text = extractor.fetch_extraction(&caption, &prompt).map_err(|e| e.to_string())?;
            let parsed = parse_extraction_response(&text).map_err(|e| e.to_string())?;
            if parsed.skipped > 0 {
                log::warn!("{}: skipped {} malformed extraction lines", image.image_id, parsed.skipped);
            }
            parsed.mentions
        }
        _ => fallback_extract(&caption, lexicon),
    };
    let queries = plan_detection_queries(&mentions);
    let detections = if queries.is_empty() {
        DetectionSet::new(image.image_id.clone(), cfg.detector.score_threshold)
    } else {
        clients.detector.fetch_detections(image, &queries).map_err(|e| e.to_string())?
    };
    let report = diagnose_image(&caption, &mentions, &detections).map_err(|e| e.to_string())?;
    Ok(ImageOutcome { caption, detections, report, mentions: mentions.len() })
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn write_records<R: crate::datamodel::Record>(path: &Path, records: &[R]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    write_jsonl(path, records).map_err(|e| PipelineError::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiagnoseSummary {
    pub images: usize,
    pub diagnosed: usize,
    /// `(image_id, reason)` for every image that could not be diagnosed.
    pub failures: Vec<(String, String)>,
    /// Mentions extracted per diagnosed image.
    pub mentions: BTreeMap<String, usize>,
    pub profile: HallucinationProfile,
}

impl DiagnoseSummary {
    /// 0 when every image was diagnosed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures.is_empty())
    }
}

impl fmt::Display for DiagnoseSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "diagnosed {}/{} images", self.diagnosed, self.images)?;
        for (id, why) in &self.failures {
            write!(f, "\n  failed {id}: {why}")?;
        }
        Ok(())
    }
}

/// Stage one over the whole manifest. Writes captions, detections, diagnosis
/// reports, the hallucination profile and a failure list to the output
/// directory; a failing image is recorded and skipped.
pub fn run_diagnose(cfg: &RunConfig) -> Result<DiagnoseSummary, PipelineError> {
    cfg.validate()?;
    let images = cfg.load_manifest()?;
    let lexicon = cfg.load_lexicon()?;
    let shots = cfg.load_few_shot()?;
    let clients = Clients::build(cfg)?;

    let results: Vec<(String, Result<ImageOutcome, String>)> = pool(cfg.parallelism)?.install(|| {
        images
            .par_iter()
            .map(|img| (img.image_id.clone(), diagnose_one(cfg, &clients, &lexicon, &shots, img)))
            .collect()
    });
    for w in clients.drain_warnings() {
        log::debug!("client warning: {w}");
    }

    let mut summary = DiagnoseSummary { images: images.len(), ..Default::default() };
    let (mut captions, mut detections, mut reports) = (Vec::new(), Vec::new(), Vec::new());
    for (id, result) in results {
        match result {
            Ok(o) => {
                summary.mentions.insert(id, o.mentions);
                captions.push(o.caption);
                detections.push(o.detections);
                reports.push(o.report);
            }
            Err(why) => {
                log::error!("{id}: {why}");
                summary.failures.push((id, why));
            }
        }
    }
    summary.failures.sort();
    summary.diagnosed = reports.len();
    let mut profile = aggregate_corpus(&reports).map_err(input)?;
    if reports.is_empty() {
        profile.model_tag = cfg.captioner.model_name.clone();
    }

    write_records(&cfg.output_path(CAPTIONS_FILE), &captions)?;
    write_records(&cfg.output_path(DETECTIONS_FILE), &detections)?;
    write_records(&cfg.output_path(DIAGNOSIS_FILE), &reports)?;
    write_text(&cfg.output_path(PROFILE_FILE), &profile.to_table())?;
    let failures: String = summary.failures.iter().map(|(id, why)| format!("{id}\t{why}\n")).collect();
    write_text(&cfg.output_path(FAILURES_FILE), &failures)?;
    summary.profile = profile;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub samples: usize,
    pub per_image: BTreeMap<String, usize>,
    pub polarity: PolaritySummary,
}

/// Stage two: samples for every diagnosed image. Detections default to the
/// file written next to the diagnosis file.
pub fn run_generate(
    cfg: &RunConfig,
    diagnosis: &Path,
    detections: Option<&Path>,
) -> Result<GenerateSummary, PipelineError> {
    let problems = cfg.generation.validate();
    if !problems.is_empty() || cfg.parallelism < 1 {
        return Err(PipelineError::Config(problems.join("; ")));
    }
    let templates = cfg.load_templates()?;
    let images: BTreeMap<String, ImageRef> =
        cfg.load_manifest()?.into_iter().map(|i| (i.image_id.clone(), i)).collect();
    let reports: Vec<DiagnosisReport> = read_jsonl(diagnosis).map_err(input)?;
    let det_path = match detections {
        Some(p) => p.to_path_buf(),
        None => diagnosis.with_file_name(DETECTIONS_FILE),
    };
    let dets: BTreeMap<String, DetectionSet> = if reports.is_empty() && !det_path.exists() {
        BTreeMap::new()
    } else {
        read_jsonl::<DetectionSet>(&det_path).map_err(input)?.into_iter().map(|d| (d.image_id.clone(), d)).collect()
    };

    let per_image: Vec<Result<Vec<InstructionSample>, PipelineError>> = pool(cfg.parallelism)?.install(|| {
        reports
            .par_iter()
            .map(|r| {
                let image = images
                    .get(&r.image_id)
                    .ok_or_else(|| PipelineError::Input(format!("`{}` is not in the manifest", r.image_id)))?;
                let det = dets
                    .get(&r.image_id)
                    .ok_or_else(|| PipelineError::Input(format!("no detections for `{}`", r.image_id)))?;
                build_dataset(r, det, image, &templates, &cfg.generation)
                    .map_err(|e| PipelineError::Input(format!("{}: {e}", r.image_id)))
            })
            .collect()
    });
    let mut samples = Vec::new();
    let mut counts = BTreeMap::new();
    for (r, batch) in reports.iter().zip(per_image) {
        let batch = batch?;
        counts.insert(r.image_id.clone(), batch.len());
        samples.extend(batch);
    }
    write_records(&cfg.output_path(INSTRUCTIONS_FILE), &samples)?;
    Ok(GenerateSummary { samples: samples.len(), per_image: counts, polarity: PolaritySummary::of(&samples) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub model_a: String,
    pub model_b: String,
    pub p: f64,
    pub rows: Vec<SimilarityRow<f64>>,
}

pub fn run_analyze(
    profile_a: &Path,
    profile_b: &Path,
    ks: Option<&[usize]>,
    p: Option<f64>,
    report: Option<&Path>,
) -> Result<(SimilarityReport, String), PipelineError> {
    let load = |path: &Path| HallucinationProfile::load(path).map_err(input);
    let (a, b) = (load(profile_a)?, load(profile_b)?);
    let p = p.unwrap_or(DEFAULT_RBO_P);
    let ks = ks.unwrap_or(&DEFAULT_TOPKS);
    let rows = similarity_report(&a, &b, ks, p).map_err(|e| PipelineError::Config(e.to_string()))?;
    let text = render_similarity(&rows);
    let out = SimilarityReport { model_a: a.model_tag, model_b: b.model_tag, p, rows };
    if let Some(path) = report {
        write_json(path, &out)?;
    }
    Ok((out, text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Pope,
    Mme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EvalReport {
    Pope(BinaryMetrics64),
    Mme(MmeScores64),
}

pub fn run_evaluate(
    responses: &Path,
    mode: EvalMode,
    report: Option<&Path>,
) -> Result<(EvalReport, String), PipelineError> {
    let records: Vec<QARecord> = read_jsonl(responses).map_err(input)?;
    let (out, text) = match mode {
        EvalMode::Pope => {
            let m = compute_binary_metrics(&records).map_err(input)?;
            let text = render_binary(&m);
            (EvalReport::Pope(m), text)
        }
        EvalMode::Mme => {
            let s = mme_scores(&records).map_err(input)?;
            let text = render_mme(&s);
            (EvalReport::Mme(s), text)
        }
    };
    if let Some(path) = report {
        write_json(path, &out)?;
    }
    Ok((out, text))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
manifest = "m.jsonl"
offline = true
fixtures_dir = "fx"
parallelism = 2

[captioner]
model_name = "lvlm"
endpoint_url = "http://file/captioner"

[detector]
model_name = "ovod"
score_threshold = 0.4

[generation]
enabled_types = ["existence"]
seed = 3
"#;

    #[test]
    fn parse_sets_roles_and_defaults() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.detector.role, Role::Detector);
        assert_eq!(cfg.detector.score_threshold, 0.4);
        assert_eq!(cfg.extraction_mode, ExtractionMode::Fallback);
        assert_eq!(cfg.resolve(&cfg.manifest), PathBuf::from("/base/m.jsonl"));
        assert_eq!(cfg.generation.enabled_types.len(), 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("paralelism = 3", Path::new(".")), Err(PipelineError::Config(_))));
    }

    #[test]
    fn precedence_flag_over_env_over_file() {
        let mut cfg = RunConfig::parse(MINIMAL, Path::new(".")).unwrap();
        let env: BTreeMap<&str, &str> =
            [(ENV_CAPTIONER_URL, "http://env/captioner"), (ENV_PARALLELISM, "5")].into_iter().collect();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.captioner.endpoint_url, "http://env/captioner");
        assert_eq!(cfg.parallelism, 5);
        cfg.apply_overrides(&Overrides { parallelism: Some(8), seed: Some(11), ..Default::default() });
        assert_eq!(cfg.parallelism, 8);
        assert_eq!(cfg.generation.seed, 11);
        assert!(cfg.apply_env(|k| (k == ENV_OFFLINE).then(|| "maybe".to_string())).is_err());
    }

    #[test]
    fn validation_failures() {
        let mut cfg = RunConfig::parse(MINIMAL, Path::new(".")).unwrap();
        cfg.parallelism = 0;
        cfg.offline = false;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("parallelism"), "{msg}");
        assert!(msg.contains("detector: endpoint_url required"), "{msg}");
        cfg.offline = true;
        cfg.parallelism = 1;
        cfg.fixtures_dir = None;
        assert!(cfg.validate().unwrap_err().to_string().contains("fixtures_dir"));
    }

    #[test]
    fn llm_mode_requires_extractor() {
        let mut cfg = RunConfig::parse(MINIMAL, Path::new(".")).unwrap();
        cfg.extraction_mode = ExtractionMode::Llm;
        assert!(cfg.validate().unwrap_err().to_string().contains("extractor: model_name"));
    }
}
