//! End-to-end checks of the command-line interface: artifacts on disk,
//! exit codes, and seed precedence.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asyncmic"))
}

fn scene_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "room": {
            "dims": [5.0, 4.0, 3.0],
            "reflection_coeff": 0.4,
            "max_image_order": 1,
            "sample_rate_hz": 16000.0
        },
        "speakers": [
            {"position": [1.5, 1.0, 1.5], "source_id": "speech"}
        ],
        "mics": [
            {"position": [2.0, 2.0, 1.2], "tau_s": 0.005, "gamma": 1.0},
            {"position": [3.0, 2.5, 1.2], "tau_s": -0.003, "gamma": 1.0001}
        ],
        "snr_db": 20.0,
        "overlap_ratio": 0.0,
        "target_strategy": "min_latency",
        "seed": 7,
        "duration_s": 0.5,
        "noise_sources": 2
    });
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn experiment_config(dir: &Path, steps: usize) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "backbone": {
            "d_hidden": 8,
            "n_blocks": 1,
            "module_kind": "windowed_x_attn",
            "window_l": 2,
            "compression_c": 0.3
        },
        "steps": steps,
        "batch_size": 1,
        "lr": 0.001,
        "optimizer": "adam",
        "seed": 3,
        "scenes": {
            "kind": "delayed_copy",
            "n_mics": [2, 2],
            "max_offset_frames": 2,
            "duration_s": 0.5
        },
        "target_strategy": "min_latency",
        "eval_every": 0,
        "eval_scenes": 2,
        "grad_clip": 5.0
    });
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn simulate_writes_wavs_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scene_config(dir.path());
    let out = dir.path().join("scenes");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--count", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    for i in 0..2 {
        let scene = out.join(format!("scene_{i:03}"));
        assert!(scene.join("mic_00.wav").exists());
        assert!(scene.join("mic_01.wav").exists());
        assert!(scene.join("target.wav").exists());
        assert!(scene.join("metadata.json").exists());
    }
}

#[test]
fn invalid_geometry_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scene_config(dir.path());
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x"))
        .args(["--set", "mics.0.position=[9.0,9.0,9.0]"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn malformed_json_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path(), 2);
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("checkpoint.bin").exists());

    // eval falls back to the config echoed inside the checkpoint
    let eval_out = dir.path().join("eval");
    let output = bin()
        .args(["eval", "--checkpoint"])
        .arg(out.join("checkpoint.bin"))
        .arg("--out")
        .arg(&eval_out)
        .args(["--scenes", "2"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(eval_out.join("eval.csv").exists());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("\"n_scenes\":2"), "stdout: {text}");
}

#[test]
fn unknown_module_kind_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path(), 1);
    let status = bin()
        .args(["compare", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("cmp"))
        .args(["--kinds", "tac,bogus"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn seed_env_and_flag_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path(), 1);
    let out_flag = dir.path().join("flag");
    let out_env = dir.path().join("env");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_flag)
        .args(["--seed", "41"])
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_env)
        .env("ASYNC_MIC_SEED", "41")
        .status()
        .unwrap()
        .success());
    let a = std::fs::read(out_flag.join("checkpoint.bin")).unwrap();
    let b = std::fs::read(out_env.join("checkpoint.bin")).unwrap();
    assert_eq!(a, b);
}
