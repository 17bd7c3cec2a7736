//! End-to-end runs of the `dub-engine` binary on tiny configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dub_engine::cli::{load_dub_output, RunConfig, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK};
use dub_engine::model::load_checkpoint;
use dub_engine::train::Trainer;
use dub_engine::world::load_clips;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_dub-engine");

fn tiny(out: &Path) -> Value {
    json!({
        "seed": 3,
        "out_dir": out,
        "world": { "n_clips": 2, "clip_len": 165 },
        "train": {
            "steps": 3,
            "batch_size": 2,
            "log_every": 1,
            "model": { "depth": 1, "width": 16, "heads": 2, "d_ref": 8 }
        },
        "dub": { "ode_steps": 2 }
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> (i32, String) {
    let out = Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .expect("binary runs");
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

fn must(cmd: &str, config: &Path, extra: &[&str]) {
    let (code, text) = run(cmd, config, extra);
    assert_eq!(code, EXIT_OK, "{cmd} failed:\n{text}");
}

fn artifacts(dir: &Path) -> Value {
    let s: Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    s["artifacts"].clone()
}

/// Data, training, and dubbing in `dir`. Inputs are pinned to `dir` so later
/// `--out` overrides only move the outputs.
fn pipeline(dir: &Path) -> PathBuf {
    let mut v = tiny(dir);
    let data = dir.join("dataset.bin");
    v["train"]["dataset"] = json!(data);
    v["dub"]["checkpoint"] = json!(dir.join("checkpoint.bin"));
    v["dub"]["source"] = json!({ "dataset": data, "index": 0 });
    v["dub"]["audio"] = json!({ "dataset": data, "index": 1 });
    let cfg = write_config(dir, "run.json", &v);
    must("generate-data", &cfg, &[]);
    must("train", &cfg, &[]);
    must("dub", &cfg, &[]);
    cfg
}

#[test]
fn identical_configs_give_identical_bytes() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    for name in ["dataset.bin", "checkpoint.bin", "train_log.jsonl", "dub.bin", "report.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    assert_eq!(artifacts(a.path())["dub.bin"], artifacts(b.path())["dub.bin"]);
}

#[test]
fn config_is_copied_verbatim_and_overrides_are_recorded() {
    let dir = TempDir::new().unwrap();
    let text = serde_json::to_string_pretty(&tiny(dir.path())).unwrap() + "\n\n";
    let cfg = dir.path().join("odd-spacing.json");
    fs::write(&cfg, &text).unwrap();
    must("generate-data", &cfg, &["--n-clips", "1"]);
    assert_eq!(fs::read_to_string(dir.path().join("config.json")).unwrap(), text);
    let eff = RunConfig::from_json(&fs::read_to_string(dir.path().join("config.effective.json")).unwrap()).unwrap();
    assert_eq!(eff.world.n_clips, 1);
    assert_eq!(load_clips(&dir.path().join("dataset.bin")).unwrap().len(), 1);
    let digest = artifacts(dir.path())["dataset.bin"].as_str().unwrap().to_string();
    assert_eq!(digest.len(), 64);
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let dir = TempDir::new().unwrap();
    let mut v = tiny(dir.path());
    v["train"]["steps"] = json!(0);
    let cfg = write_config(dir.path(), "run.json", &v);
    must("generate-data", &cfg, &[]);
    must("train", &cfg, &[]);

    let rc = RunConfig::from_json(&v.to_string()).unwrap();
    let clips = load_clips(&dir.path().join("dataset.bin")).unwrap();
    let fresh = Trainer::new(&clips, rc.train.to_config(rc.train.strategy, rc.train_seed())).unwrap();
    let (saved, meta) = load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(meta.step, 0);
    for ((n1, a), (n2, b)) in saved.params().iter().zip(fresh.model().params().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a, b, "{n1} moved without training");
    }
}

#[test]
fn sdedit_zero_returns_the_source_and_render_writes_frames() {
    let dir = TempDir::new().unwrap();
    let cfg = pipeline(dir.path());
    must("dub", &cfg, &["--sdedit-t0", "0", "--render", "--out", dir.path().join("t0").to_str().unwrap()]);
    let out = load_dub_output(&dir.path().join("t0/dub.bin")).unwrap();
    let clips = load_clips(&dir.path().join("dataset.bin")).unwrap();
    assert_eq!(out.frames(), clips[0].video.frames());
    let pngs = fs::read_dir(dir.path().join("t0/frames")).unwrap().count();
    assert_eq!(pngs, clips[0].video.latent_len());
}

#[test]
fn every_mode_dubs_through_the_cli() {
    let dir = TempDir::new().unwrap();
    let cfg = pipeline(dir.path());
    for mode in ["streaming", "i2v", "fl2v"] {
        let out = dir.path().join(mode);
        must("dub", &cfg, &["--mode", mode, "--out", out.to_str().unwrap()]);
        let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
        assert!(report["sync_corr"].is_number(), "{mode}: {report}");
    }
}

#[test]
fn empty_dataset_is_written_but_cannot_train() {
    let dir = TempDir::new().unwrap();
    let mut v = tiny(dir.path());
    v["world"]["n_clips"] = json!(0);
    let cfg = write_config(dir.path(), "run.json", &v);
    let (code, text) = run("generate-data", &cfg, &[]);
    assert_eq!(code, EXIT_OK);
    assert!(text.contains("warning"), "{text}");
    assert!(load_clips(&dir.path().join("dataset.bin")).unwrap().is_empty());
    assert_eq!(run("train", &cfg, &[]).0, EXIT_CONFIG);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = TempDir::new().unwrap();
    let mut bad = tiny(dir.path());
    bad["train"]["stepz"] = json!(1);
    assert_eq!(run("train", &write_config(dir.path(), "bad.json", &bad), &[]).0, EXIT_CONFIG);

    let cfg = write_config(dir.path(), "run.json", &tiny(dir.path()));
    assert_eq!(run("train", &cfg, &["--sdedit-t0", "1.5"]).0, EXIT_CONFIG);
    // No dataset yet.
    assert_eq!(run("train", &cfg, &[]).0, EXIT_DATA);

    must("generate-data", &cfg, &[]);
    // 165-frame clips leave no frame far enough from any window.
    let (code, text) = run("train", &cfg, &["--strategy", "m2"]);
    assert_eq!(code, EXIT_DATA, "{text}");
    assert!(text.contains("far"), "{text}");

    let mut hot = tiny(dir.path());
    hot["train"]["learning_rate"] = json!(1e9);
    hot["train"]["grad_clip"] = json!(1e12);
    hot["train"]["steps"] = json!(20);
    let (code, text) = run("train", &write_config(dir.path(), "hot.json", &hot), &[]);
    assert_eq!(code, EXIT_NUMERICAL, "{text}");
}

#[test]
fn ablate_writes_one_row_per_strategy() {
    let dir = TempDir::new().unwrap();
    let mut v = tiny(dir.path());
    v["world"] = json!({ "n_clips": 2, "clip_len": 405 });
    v["train"]["steps"] = json!(2);
    v["ablate"] = json!({ "eval_seeds": 2, "eval_chunks": 2, "ode_steps": 2 });
    let cfg = write_config(dir.path(), "run.json", &v);
    must("ablate", &cfg, &[]);

    let mut table = csv::Reader::from_path(dir.path().join("ablation.csv")).unwrap();
    let strategies: Vec<String> = table.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(strategies, ["m0", "m1", "m2", "m3"]);
    let runs = csv::Reader::from_path(dir.path().join("ablation_runs.csv")).unwrap().into_records().count();
    assert_eq!(runs, 4 * 3 * 2);
    for kind in ["m0", "m1", "m2", "m3"] {
        assert!(dir.path().join(format!("checkpoint_{kind}.bin")).exists());
    }
}
