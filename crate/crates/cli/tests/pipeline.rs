//! End-to-end pipeline checks on a small system: every stage runs from a
//! config file, artifacts land where the layout says, and reruns are
//! byte-identical.

use std::path::{Path, PathBuf};
use std::process::Command;

fn sdrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdrl"))
}

fn write_config(dir: &Path) -> PathBuf {
    let out_dir = dir.join("run");
    let config = serde_json::json!({
        "system": { "model": "allen_cahn", "grid_points": 15 },
        "sampling": { "count": 60, "start_index": 1, "tolerance": 1e-9 },
        "training": {
            "target": "value_gradient",
            "hidden": [32, 32],
            "activation": "tanh",
            "mu_v": 1.0,
            "mu_dv": 1.0,
            "epochs": 4,
            "batch_size": 30,
            "lbfgs_memory": 10,
            "steps_per_batch": 5,
            "train_fraction": 0.8,
            "split_seed": 17,
            "seed": 3
        },
        "evaluation": { "count": 40 },
        "simulation": {
            "controllers": ["zero", "linear_k0", "sdre", "nn_value"],
            "x0": { "kind": "quadratic_profile" },
            "horizon": 0.5,
            "dt": 0.01,
            "refresh_steps": 5,
            "tolerance": 1e-9
        },
        "out_dir": out_dir
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run(stage: &str, config: &Path) {
    let output = sdrl()
        .arg(stage)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "{stage} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn full_pipeline_produces_expected_artifacts() {
    let dir = std::env::temp_dir().join("sdrl_cli_pipeline");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_config(&dir);
    let run_dir = dir.join("run");

    run("gen", &config);
    assert!(run_dir.join("dataset.csv").exists());
    assert!(run_dir.join("manifest.json").exists());

    run("train", &config);
    assert!(run_dir.join("model.ckpt").exists());
    assert!(run_dir.join("history.csv").exists());
    assert!(run_dir.join("train_summary.json").exists());

    run("eval", &config);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("eval.json")).unwrap())
            .unwrap();
    assert_eq!(eval["count"], 40);
    assert!(eval["metrics"]["value"]["mse"].as_f64().unwrap().is_finite());

    run("simulate", &config);
    for name in ["zero", "linear_k0", "sdre", "nn_value"] {
        assert!(
            run_dir.join(format!("traj_{name}.csv")).exists(),
            "missing trajectory for {name}"
        );
    }
    let costs = std::fs::read_to_string(run_dir.join("costs.csv")).unwrap();
    assert!(costs.lines().count() >= 5);
    assert!(costs.starts_with("controller,total_cost,"));

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn reruns_are_byte_identical() {
    let dir = std::env::temp_dir().join("sdrl_cli_determinism");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_config(&dir);
    let run_dir = dir.join("run");

    let payloads = [
        "dataset.csv",
        "manifest.json",
        "model.ckpt",
        "history.csv",
        "train_summary.json",
        "eval.json",
        "traj_sdre.csv",
        "costs.csv",
    ];

    run("gen", &config);
    run("train", &config);
    run("eval", &config);
    run("simulate", &config);
    let first: Vec<Vec<u8>> = payloads
        .iter()
        .map(|p| std::fs::read(run_dir.join(p)).unwrap())
        .collect();

    run("gen", &config);
    run("train", &config);
    run("eval", &config);
    run("simulate", &config);
    for (name, before) in payloads.iter().zip(first.iter()) {
        let after = std::fs::read(run_dir.join(name)).unwrap();
        assert_eq!(before, &after, "{name} changed between identical reruns");
    }

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gen_with_zero_samples_fails_without_artifacts() {
    let dir = std::env::temp_dir().join("sdrl_cli_zero_samples");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let out_dir = dir.join("run");
    let config = serde_json::json!({
        "system": { "model": "allen_cahn", "grid_points": 11 },
        "sampling": { "count": 0 },
        "out_dir": out_dir
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let output = sdrl().arg("gen").arg("--config").arg(&path).output().unwrap();
    assert!(!output.status.success());
    assert!(!out_dir.join("dataset.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn out_flag_overrides_config_directory() {
    let dir = std::env::temp_dir().join("sdrl_cli_out_override");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_config(&dir);
    let alt = dir.join("alt");
    let output = sdrl()
        .arg("gen")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&alt)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(alt.join("dataset.csv").exists());
    assert!(!dir.join("run").join("dataset.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}
