use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use uhr_core::image::ImageTensor;

fn uhrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uhrkit")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Mid-gray RGB noise; large enough to pass the default file-size floor.
fn noise(h: usize, w: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w * 3).map(|_| rng.random_range(70..190)).collect()
}

fn save(path: &Path, h: usize, w: usize, data: Vec<u8>) {
    ImageTensor::from_u8(h, w, 3, data).unwrap().save_png(path).unwrap();
}

/// `n` triplets whose edit brightens a 40×40 block.
fn corpus(dir: &Path, n: usize) -> std::path::PathBuf {
    let mut lines = String::new();
    for i in 0..n {
        let input = noise(128, 128, i as u64);
        let mut edited = input.clone();
        for y in 30..70 {
            for x in 40..80 {
                for c in 0..3 {
                    edited[(y * 128 + x) * 3 + c] = input[(y * 128 + x) * 3 + c].saturating_add(60);
                }
            }
        }
        save(&dir.join(format!("{i}_a.png")), 128, 128, input);
        save(&dir.join(format!("{i}_b.png")), 128, 128, edited);
        lines.push_str(&format!(
            "{{\"id\":\"t{i}\",\"input_path\":\"{i}_a.png\",\"edited_path\":\"{i}_b.png\",\"instruction\":\"brighten\",\"source\":\"fixture\"}}\n"
        ));
    }
    let m = dir.join("in.jsonl");
    std::fs::write(&m, lines).unwrap();
    m
}

#[test]
fn selftest_succeeds() {
    let o = uhrkit(&["numerics", "selftest", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().count() >= 10 && out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn curate_run_writes_manifest_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), 10);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[quality.sharpness_rule]\nmode = \"absolute\"\n").unwrap();
    let (out, rep) = (dir.path().join("out.jsonl"), dir.path().join("report.json"));
    let o = uhrkit(&[
        "curate", "run", "--manifest", m.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--report", rep.to_str().unwrap(), "--workers", "2", "--seed", "5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kept: Vec<Value> = std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[0]["source"], "fixture");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(report["stages"].as_array().unwrap().len(), 4);
    assert_eq!(report["config"]["workers"], 2);
    assert_eq!(report["config"]["seed"], 5);
    assert_eq!(report["output_records"], 2);
}

#[test]
fn curate_stage_runs_one_stage() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), 3);
    let out = dir.path().join("out.jsonl");
    let o = uhrkit(&["curate", "stage", "preliminary", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("digest_input"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path(), 1);
    let out = dir.path().join("out.jsonl");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"aesthetic":{"retention_fraction":2}}"#).unwrap();
    let base = ["--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = uhrkit(&[&["curate", "run", "--config", bad.to_str().unwrap()][..], &base].concat());
    assert_eq!(code(&o), 2);
    let o = uhrkit(&[&["curate", "stage", "dedupe"][..], &base].concat());
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn empty_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    save(&dir.path().join("s.png"), 8, 8, noise(8, 8, 0));
    let m = dir.path().join("in.jsonl");
    std::fs::write(&m, "{\"id\":\"x\",\"input_path\":\"s.png\",\"edited_path\":\"s.png\",\"instruction\":\"y\"}\n").unwrap();
    let out = dir.path().join("out.jsonl");
    let o = uhrkit(&["curate", "run", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn pfid_report() {
    let dir = tempfile::tempdir().unwrap();
    for side in ["real", "gen"] {
        std::fs::create_dir(dir.path().join(side)).unwrap();
        for i in 0..5 {
            let seed = if side == "real" { i } else { 100 + i };
            save(&dir.path().join(side).join(format!("{i}.png")), 128, 128, noise(128, 128, seed));
        }
    }
    let rep = dir.path().join("report.json");
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let o = uhrkit(&[
        "pfid", "--real", &p("real"), "--gen", &p("gen"), "--patch", "32", "--stride", "32",
        "--features", "builtin", "--seed", "1", "--out", rep.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(r["real_patches"], 80);
    assert_eq!(r["generated_patches"], 80);
    assert_eq!(r["feature_dim"], 64);
    assert!(r["provider"].as_str().unwrap().starts_with("builtin"));
    assert!(r["score"].as_f64().unwrap() >= 0.0);
}

#[test]
fn pairs_from_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    let base = noise(96, 96, 9);
    for i in 0..4 {
        save(&frames.join(format!("f{i}.png")), 96, 96, base.clone());
    }
    let out = dir.path().join("pairs.jsonl");
    let o = uhrkit(&["curate", "pairs", "--frames", frames.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Value> = std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["verdict"] == "drop_similar"));

    // A black frame fails exposure: its pairs are marked, and only scored
    // when the gate runs after scoring.
    save(&frames.join("f2.png"), 96, 96, vec![0; 96 * 96 * 3]);
    for (gate, scored) in [("before", false), ("after", true)] {
        let o = uhrkit(&[
            "curate", "pairs", "--frames", frames.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--quality", gate, "--scene-threshold", "3",
        ]);
        assert_eq!(code(&o), 0);
        let rows: Vec<Value> = std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let verdicts: Vec<&str> = rows.iter().map(|r| r["verdict"].as_str().unwrap()).collect();
        assert_eq!(verdicts, ["drop_similar", "drop_quality", "drop_quality"]);
        // A flat black frame embeds to the zero vector, so scoring reports an error.
        assert_eq!(rows[1].get("error").is_some(), scored);
    }
}
