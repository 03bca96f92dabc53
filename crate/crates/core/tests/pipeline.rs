use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dftg_core::analytics::DEFAULT_TOPKS;
use dftg_core::clients::{prompt_digest, ExtractionFixture};
use dftg_core::datamodel::{
    read_jsonl, write_jsonl, CaptionRecord, DetectionSet, DiagnosisReport, ImageRef, InstructionSample, SampleType,
};
use dftg_core::diagnosis::HallucinationProfile;
use dftg_core::evalmetrics::{Gold, QARecord};
use dftg_core::extraction::{build_extraction_prompt, fallback_extract, render_triplet, FewShotSet, Lexicon};
use dftg_core::grounding::pairwise_relation;
use dftg_core::pipeline::{
    run_analyze, run_diagnose, run_evaluate, run_generate, EvalMode, EvalReport, ExtractionMode, PipelineError,
    RunConfig, DETECTIONS_FILE, DIAGNOSIS_FILE, INSTRUCTIONS_FILE, PROFILE_FILE,
};

fn planted() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/planted")
}

/// A private copy of the planted corpus that tests may edit.
fn corpus_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["manifest.jsonl", "captions.jsonl", "detections.jsonl", "run.toml"] {
        fs::copy(planted().join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn config(dir: &Path) -> RunConfig {
    RunConfig::load(&dir.join("run.toml")).unwrap()
}

#[test]
fn missing_fixture_isolates_one_image() {
    let dir = corpus_copy();
    let captions: Vec<CaptionRecord> = read_jsonl(&dir.path().join("captions.jsonl")).unwrap();
    let kept: Vec<CaptionRecord> = captions.into_iter().filter(|c| c.image_id != "img007").collect();
    write_jsonl(&dir.path().join("captions.jsonl"), &kept).unwrap();

    let cfg = config(dir.path());
    let summary = run_diagnose(&cfg).unwrap();
    assert_eq!(summary.exit_code(), 1);
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].0, "img007");
    let reports: Vec<DiagnosisReport> = read_jsonl(&cfg.output_path(DIAGNOSIS_FILE)).unwrap();
    assert_eq!(reports.len(), 19);
    let failures = fs::read_to_string(cfg.output_path("failures.tsv")).unwrap();
    assert!(failures.starts_with("img007\t"), "{failures}");
}

#[test]
fn warm_cache_rerun_is_byte_identical() {
    let dir = corpus_copy();
    let mut cfg = config(dir.path());
    cfg.cache_dir = Some(PathBuf::from("cache"));
    run_diagnose(&cfg).unwrap();
    let first = fs::read(cfg.output_path(DIAGNOSIS_FILE)).unwrap();
    let cached = fs::read_dir(dir.path().join("cache/detector")).unwrap().count();
    assert!(cached > 20, "{cached} detector responses cached");
    // With every response cached the fixtures are no longer needed.
    fs::write(dir.path().join("detections.jsonl"), "").unwrap();
    fs::write(dir.path().join("captions.jsonl"), "").unwrap();
    let summary = run_diagnose(&cfg).unwrap();
    assert_eq!(summary.exit_code(), 0);
    assert_eq!(fs::read(cfg.output_path(DIAGNOSIS_FILE)).unwrap(), first);
}

#[test]
fn llm_extraction_matches_rule_based_run() {
    let dir = corpus_copy();
    let mut cfg = config(dir.path());
    let fallback = run_diagnose(&cfg).unwrap();
    let expected = fs::read(cfg.output_path(DIAGNOSIS_FILE)).unwrap();

    // Extractor fixtures answering each caption's prompt with the triplets
    // the rule-based route finds.
    let lexicon = Lexicon::default().with_extras(cfg.lexicon_extras.iter().map(String::as_str));
    let shots = FewShotSet::default();
    let captions: Vec<CaptionRecord> = read_jsonl(&dir.path().join("captions.jsonl")).unwrap();
    let fixtures: Vec<ExtractionFixture> = captions
        .iter()
        .map(|c| ExtractionFixture {
            prompt_digest: prompt_digest(&build_extraction_prompt(c, &shots).unwrap()),
            response: fallback_extract(c, &lexicon).iter().map(render_triplet).collect::<Vec<_>>().join("\n"),
        })
        .collect();
    write_jsonl(&dir.path().join("extractions.jsonl"), &fixtures).unwrap();

    cfg.extraction_mode = ExtractionMode::Llm;
    cfg.extractor.model_name = "extractor-sim".into();
    cfg.output_dir = PathBuf::from("out-llm");
    let llm = run_diagnose(&cfg).unwrap();
    assert_eq!(llm.exit_code(), 0, "{llm}");
    assert_eq!(llm.mentions, fallback.mentions);
    assert_eq!(fs::read(cfg.output_path(DIAGNOSIS_FILE)).unwrap(), expected);
}

#[test]
fn malformed_manifest_is_a_stage_error() {
    let dir = corpus_copy();
    fs::write(dir.path().join("manifest.jsonl"), "{\"image_id\":\"a\"}\n").unwrap();
    let err = run_diagnose(&config(dir.path())).unwrap_err();
    assert!(matches!(err, PipelineError::Input(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("line 1"), "{err}");
}

fn diagnose(dir: &Path) -> (RunConfig, Vec<DiagnosisReport>, BTreeMap<String, DetectionSet>) {
    let cfg = config(dir);
    run_diagnose(&cfg).unwrap();
    let reports = read_jsonl(&cfg.output_path(DIAGNOSIS_FILE)).unwrap();
    let dets = read_jsonl::<DetectionSet>(&cfg.output_path(DETECTIONS_FILE))
        .unwrap()
        .into_iter()
        .map(|d| (d.image_id.clone(), d))
        .collect();
    (cfg, reports, dets)
}

#[test]
fn existence_only_counts_verified_plus_hallucinated() {
    let dir = corpus_copy();
    let (mut cfg, reports, _) = diagnose(dir.path());
    cfg.generation.enabled_types = [SampleType::Existence].into_iter().collect();
    let summary = run_generate(&cfg, &cfg.output_path(DIAGNOSIS_FILE), None).unwrap();
    let expected: usize = reports.iter().map(|r| r.verified_objects.len() + r.hallucinated_objects.len()).sum();
    assert_eq!(summary.samples, expected);
}

#[test]
fn all_types_match_per_type_construction_rules() {
    let dir = corpus_copy();
    let (cfg, reports, dets) = diagnose(dir.path());
    let images: BTreeMap<String, ImageRef> =
        read_jsonl::<ImageRef>(&dir.path().join("manifest.jsonl")).unwrap().into_iter().map(|i| (i.image_id.clone(), i)).collect();
    let summary = run_generate(&cfg, &cfg.output_path(DIAGNOSIS_FILE), None).unwrap();

    let mut expected: BTreeMap<SampleType, usize> = BTreeMap::new();
    for r in &reports {
        let det = &dets[&r.image_id];
        *expected.entry(SampleType::Existence).or_default() += r.verified_objects.len() + r.hallucinated_objects.len();
        *expected.entry(SampleType::Attribute).or_default() +=
            r.verified_attributes.len() + r.hallucinated_attributes.len();
        let singles: Vec<(&str, _)> = r
            .verified_objects
            .iter()
            .filter_map(|m| match det.entries[&m.object].as_slice() {
                [one] => Some((m.object.as_str(), one.bbox)),
                _ => None,
            })
            .collect();
        *expected.entry(SampleType::Position).or_default() += 2 * singles.len();
        for (i, a) in singles.iter().enumerate() {
            for b in &singles[i + 1..] {
                let rel = pairwise_relation((a.0, &a.1), (b.0, &b.1), &images[&r.image_id], cfg.generation.delta).unwrap();
                *expected.entry(SampleType::Relation).or_default() += 2 * usize::from(rel.is_some());
            }
        }
    }
    let got: BTreeMap<SampleType, usize> =
        summary.polarity.counts.iter().map(|(t, (p, n))| (*t, p + n)).collect();
    assert_eq!(got, expected);
    assert_eq!(summary.samples, expected.values().sum::<usize>());
}

#[test]
fn empty_diagnosis_gives_empty_dataset() {
    let dir = corpus_copy();
    let cfg = config(dir.path());
    let diag = dir.path().join("empty/diagnosis.jsonl");
    fs::create_dir_all(diag.parent().unwrap()).unwrap();
    fs::write(&diag, "").unwrap();
    let summary = run_generate(&cfg, &diag, None).unwrap();
    assert_eq!(summary.samples, 0);
    let written: Vec<InstructionSample> = read_jsonl(&cfg.output_path(INSTRUCTIONS_FILE)).unwrap();
    assert!(written.is_empty());
}

#[test]
fn generate_rejects_schema_mismatch() {
    let dir = corpus_copy();
    let cfg = config(dir.path());
    let diag = dir.path().join("bad.jsonl");
    fs::write(&diag, "{\"image_id\":\"img000\",\"verified_objects\":3}\n").unwrap();
    let err = run_generate(&cfg, &diag, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn profile_file(dir: &Path, name: &str, counts: &[(&str, u64)]) -> PathBuf {
    let mut p = HallucinationProfile::new(name);
    p.corpus_size = 100;
    for (k, v) in counts {
        p.counts.insert(k.to_string(), *v);
    }
    let path = dir.join(format!("{name}.tsv"));
    p.save(&path).unwrap();
    path
}

#[test]
fn analyze_self_disjoint_and_engineered() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = (0..20).map(|i| format!("obj{i:02}")).collect();
    let a_counts: Vec<(&str, u64)> = names.iter().enumerate().map(|(i, n)| (n.as_str(), 50 - i as u64)).collect();
    let a = profile_file(dir.path(), "a", &a_counts);

    let (same, text) = run_analyze(&a, &a, None, None, None).unwrap();
    assert!(same.rows.iter().all(|r| r.overlap_percent == Some(100.0) && (r.rbo.unwrap() - 1.0).abs() < 1e-12));
    assert!(text.contains("100.0%"));

    let others: Vec<String> = (0..20).map(|i| format!("zz{i:02}")).collect();
    let b = profile_file(dir.path(), "b", &others.iter().map(|n| (n.as_str(), 9)).collect::<Vec<_>>());
    let (disjoint, _) = run_analyze(&a, &b, None, None, None).unwrap();
    assert!(disjoint.rows.iter().all(|r| r.overlap_percent == Some(0.0) && r.rbo == Some(0.0)));

    // Shares obj00..obj04 with `a` at the bottom of its ranking; unique names on top.
    let mut c_counts: Vec<(&str, u64)> = others[..15].iter().map(|n| (n.as_str(), 40)).collect();
    c_counts.extend(names[..5].iter().map(|n| (n.as_str(), 1)));
    let c = profile_file(dir.path(), "c", &c_counts);
    let report = dir.path().join("sim.json");
    let (eng, _) = run_analyze(&a, &c, Some(&DEFAULT_TOPKS), Some(0.9), Some(&report)).unwrap();
    let overlaps: Vec<Option<f64>> = eng.rows.iter().map(|r| r.overlap_percent).collect();
    assert_eq!(overlaps, vec![Some(0.0), Some(0.0), Some(0.0), Some(25.0)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["rows"][3]["k"], 20);
    assert_eq!(json["model_b"], "c");
}

#[test]
fn analyze_marks_short_profiles_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let a = profile_file(dir.path(), "short", &[("dog", 3), ("cat", 2), ("kite", 1), ("cup", 1), ("bowl", 1), ("sink", 1)]);
    let (r, text) = run_analyze(&a, &a, None, None, None).unwrap();
    assert!(r.rows[0].rbo.is_some());
    assert!(r.rows[1..].iter().all(|row| row.rbo.is_none() && row.overlap_percent.is_none()));
    assert_eq!(text.matches("n/a").count(), 6);
}

#[test]
fn profile_from_diagnose_round_trips() {
    let dir = corpus_copy();
    let cfg = config(dir.path());
    let summary = run_diagnose(&cfg).unwrap();
    let loaded = HallucinationProfile::load(&cfg.output_path(PROFILE_FILE)).unwrap();
    assert_eq!(loaded, summary.profile);
    assert_eq!(loaded.corpus_size, 20);
}

#[test]
fn evaluate_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let recs = vec![
        QARecord { image_id: "a".into(), question: "1".into(), gold: Gold::Yes, response_text: "Yes.".into() },
        QARecord { image_id: "a".into(), question: "2".into(), gold: Gold::No, response_text: "No.".into() },
        QARecord { image_id: "b".into(), question: "1".into(), gold: Gold::Yes, response_text: "Yes".into() },
        QARecord { image_id: "b".into(), question: "2".into(), gold: Gold::No, response_text: "Yes".into() },
    ];
    write_jsonl(&path, &recs).unwrap();
    let (mme, text) = run_evaluate(&path, EvalMode::Mme, None).unwrap();
    assert_eq!(text, "Accuracy | Accuracy+ | Total\n75.00 | 50.00 | 125.00\n");
    assert!(matches!(mme, EvalReport::Mme(ref s) if s.total == 125.0));
    let report = dir.path().join("pope.json");
    let (pope, _) = run_evaluate(&path, EvalMode::Pope, Some(&report)).unwrap();
    let EvalReport::Pope(m) = pope else { panic!("mode") };
    assert_eq!((m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_), (2, 1, 1, 0));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mode"], "pope");
    assert_eq!(json["counts"]["fn"], 0);

    fs::write(&path, "not json\n").unwrap();
    assert_eq!(run_evaluate(&path, EvalMode::Pope, None).unwrap_err().exit_code(), 2);
}
