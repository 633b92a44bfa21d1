//! CLI smoke tests over the compiled binary: subcommand wiring, exit codes,
//! file outputs. Uses a tiny config to keep runtimes down.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dirsynth"))
}

fn tiny_config_file(dir: &PathBuf) -> PathBuf {
    let cfg = serde_json::json!({
        "variant_name": "full",
        "seed": 29,
        "n_per_composition": 2,
        "heldout": [
            {"tone": "cool", "mouth": "lipstick"},
            {"hair": "red", "eyes": "blue"}
        ],
        "generator": {
            "layers": 4, "dim": 16, "gain": 2.0, "decision_margin": 2.0,
            "canonical_boost": 2.0, "semantic_scale": 0.2, "ripple_onset": 8.0,
            "ripple_bandwidth": 1.25, "ripple_max": 0.9,
            "ripple_amplitude": [0.2, 0.16, 0.24], "seed": 0
        },
        "encoder": {
            "embed_dim": 32, "token_dim": 24, "hidden": 64, "patch": 8,
            "epochs": 4, "batch_size": 16, "lr": 5e-3, "temp_init": 14.285714285714286,
            "temp_clamp": [1.0, 100.0], "holdout_fraction": 0.2
        },
        "t2d": {
            "token_dim": 24, "hidden": 96, "iterations": 30, "batch_size": 8,
            "lr": 1e-2, "theta": 4.0,
            "loss_mode": {"Contrastive": "exclude-positive"},
            "norm_penalty_weight": 1.0, "train_stage_reg_weight": 0.0
        },
        "a2d": {
            "token_dim": 24, "hidden": 96, "iterations": 30, "batch_size": 2,
            "lr": 2e-3, "alpha": 1.0, "theta": 2.0, "norm_penalty_weight": 1.0,
            "adam_eps": 1e-4, "grad_clip": 5.0, "mask_flip_prob": 0.0,
            "loss_mode": "semantic", "disentangle": "spatial", "mode": "local"
        },
        "theta_mode": "min",
        "eval": {
            "n_real": 20, "n_synth": 20, "r_precision_candidates": 10,
            "classifier_epochs": 30, "classifier_lr": 0.05,
            "attribute_trials": 20, "caa_coeff": 1.0, "dump_images": false
        },
        "ablation": {},
        "out_dir": dir
    });
    let path = dir.join("config.json");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("dirsynth-cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn extract_prints_attribute_phrases() {
    let out = bin()
        .args(["extract", "--caption", "the face has blond hair and is wearing lipstick"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("blond hair"), "{text}");
    assert!(text.contains("wearing lipstick"), "{text}");
}

#[test]
fn run_all_then_synth_and_norm_stats() {
    let dir = temp_dir("run-all");
    let cfg = tiny_config_file(&dir);
    let out = bin()
        .args(["run-all", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run-all failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("report.json").exists());

    let img = dir.join("out.png");
    let report = dir.join("adjust.json");
    let out = bin()
        .args([
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--caption",
            "the face has red hair and blue eyes and wearing lipstick on a cool tone",
            "--seed",
            "29",
            "--out",
            img.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "synth failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(img.exists());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(parsed["entries"].is_array());

    let out = bin()
        .args(["norm-stats", "--config", cfg.to_str().unwrap(), "--pairs", "50"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("suggested theta"), "{text}");
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = temp_dir("bad-config");
    let path = dir.join("config.json");
    std::fs::write(&path, "{\"seed\": 1}").unwrap();
    let out = bin()
        .args(["run-all", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn tampered_stage_hash_exits_with_code_3() {
    let dir = temp_dir("tamper");
    let cfg = tiny_config_file(&dir);
    let out = bin()
        .args(["make-data", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    std::fs::write(dir.join("dataset.hash"), "deadbeef").unwrap();
    let out = bin()
        .args(["make-data", "--config", cfg.to_str().unwrap(), "--resume"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_artifacts_for_synth_fail_cleanly() {
    let dir = temp_dir("no-artifacts");
    let cfg = tiny_config_file(&dir);
    // synth builds missing stages itself (resume semantics); tampering the
    // generator stage instead must abort with a hash error
    std::fs::write(dir.join("generator.hash"), "deadbeef").unwrap();
    let out = bin()
        .args([
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--caption",
            "blond hair",
            "--out",
            dir.join("x.png").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
