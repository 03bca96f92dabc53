use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn planted() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/planted")
}

fn dftg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dftg"))
        .args(args)
        .env_remove("DFTG_CAPTIONER_URL")
        .env_remove("DFTG_DETECTOR_URL")
        .env_remove("DFTG_PARALLELISM")
        .env_remove("DFTG_OFFLINE")
        .output()
        .expect("run dftg")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn diagnose_then_generate_offline() {
    let out = tempfile::tempdir().unwrap();
    let config = planted().join("run.toml");
    let (config, out_dir) = (config.to_str().unwrap(), out.path().to_str().unwrap());

    let d = dftg(&["diagnose", "--config", config, "--output-dir", out_dir, "--parallelism", "2"]);
    assert_eq!(d.status.code(), Some(0), "{}", text(&d.stderr));
    assert!(text(&d.stderr).contains("diagnosed 20/20 images"));
    assert_eq!(fs::read_to_string(out.path().join("diagnosis.jsonl")).unwrap().lines().count(), 20);

    let g = dftg(&["generate", "--config", config, "--output-dir", out_dir, "--types", "existence,attribute", "--seed", "9"]);
    assert_eq!(g.status.code(), Some(0), "{}", text(&g.stderr));
    let summary = text(&g.stdout);
    assert!(summary.contains("existence") && summary.contains("pos") && summary.contains("neg"), "{summary}");
    let samples = fs::read_to_string(out.path().join("instructions.jsonl")).unwrap();
    assert!(samples.lines().all(|l| l.contains("\"seed_tag\":9")));
    assert!(!samples.contains("\"position\""));

    let profile = out.path().join("profile.tsv");
    let a = dftg(&["analyze", profile.to_str().unwrap(), profile.to_str().unwrap(), "--topk", "5,10", "--rbo-p", "0.8"]);
    assert_eq!(a.status.code(), Some(0));
    let table = text(&a.stdout);
    assert!(table.starts_with("TopK"), "{table}");
    assert_eq!(table.matches("100.0%").count(), 2, "{table}");
    assert_eq!(table.matches("1.000").count(), 2, "{table}");
}

#[test]
fn failed_image_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["manifest.jsonl", "detections.jsonl", "run.toml"] {
        fs::copy(planted().join(f), dir.path().join(f)).unwrap();
    }
    let captions = fs::read_to_string(planted().join("captions.jsonl")).unwrap();
    let kept: String = captions.lines().filter(|l| !l.contains("\"img003\"")).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("captions.jsonl"), kept).unwrap();
    let d = dftg(&["diagnose", "--config", dir.path().join("run.toml").to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(1));
    assert!(text(&d.stderr).contains("failed img003"), "{}", text(&d.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("out/diagnosis.jsonl")).unwrap().lines().count(), 19);
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "manifest = \"m.jsonl\"\nparallelism = 0\n[captioner]\nmodel_name = \"x\"\n").unwrap();
    let d = dftg(&["diagnose", "--config", cfg.to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(2));
    assert!(text(&d.stderr).contains("parallelism"), "{}", text(&d.stderr));
}

#[test]
fn parallelism_flag_beats_environment() {
    let out = tempfile::tempdir().unwrap();
    let d = Command::new(env!("CARGO_BIN_EXE_dftg"))
        .args(["diagnose", "--config", planted().join("run.toml").to_str().unwrap()])
        .args(["--output-dir", out.path().to_str().unwrap(), "--parallelism", "3"])
        .env("DFTG_PARALLELISM", "0")
        .output()
        .unwrap();
    assert_eq!(d.status.code(), Some(0), "{}", text(&d.stderr));
    let bad = Command::new(env!("CARGO_BIN_EXE_dftg"))
        .args(["diagnose", "--config", planted().join("run.toml").to_str().unwrap()])
        .args(["--output-dir", out.path().to_str().unwrap()])
        .env("DFTG_PARALLELISM", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn evaluate_modes_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("r.jsonl");
    let mut lines = String::new();
    for (img, q, gold, resp) in [("a", "1", "yes", "Yes."), ("a", "2", "no", "No."), ("b", "1", "yes", "yes"), ("b", "2", "no", "Yes")] {
        let rec = serde_json::json!({"image_id": img, "question": q, "gold": gold, "response_text": resp});
        lines.push_str(&format!("{rec}\n"));
    }
    fs::write(&responses, lines).unwrap();
    let r = responses.to_str().unwrap();

    let mme = dftg(&["evaluate", "--responses", r, "--mode", "mme"]);
    assert_eq!(mme.status.code(), Some(0));
    assert!(text(&mme.stdout).contains("75.00 | 50.00 | 125.00"));

    let report = dir.path().join("pope.json");
    let pope = dftg(&["evaluate", "--responses", r, "--mode", "pope", "--report", report.to_str().unwrap()]);
    assert_eq!(pope.status.code(), Some(0));
    assert!(text(&pope.stdout).contains("tp=2 fp=1 tn=1 fn=0 unparsed=0"), "{}", text(&pope.stdout));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["accuracy"], 0.75);

    fs::write(&responses, "{\"image_id\": \"a\", \"gold\": \"maybe\"}\n").unwrap();
    let bad = dftg(&["evaluate", "--responses", r, "--mode", "pope"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(text(&bad.stderr).contains("line 1"), "{}", text(&bad.stderr));

    let odd = dftg(&["evaluate", "--responses", r, "--mode", "nope"]);
    assert_eq!(odd.status.code(), Some(2));
}
