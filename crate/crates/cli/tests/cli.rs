use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "dataset": {"kind": "gaussians25"},
  "generator": {"kind": "generator", "widths": [2, 16, 16, 2], "hidden_activation": "prelu"},
  "energy": {"kind": "energy", "widths": [2, 16, 16, 1], "hidden_activation": "prelu"},
  "train": {"batch_size": 32, "iterations": 20, "checkpoint_every": 10}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ebm-bibound"));
    c.env_remove("EBM_BIBOUND_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("toy25.json");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn train(dir: &Path, cfg: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join("run");
    let o = out.to_string_lossy().into_owned();
    let mut args = vec!["train", "--config", cfg, "--out-dir", &o];
    args.extend_from_slice(extra);
    ok_json(&run(&args));
    out
}

#[test]
fn template_config_matches_arch_layout() {
    let c = ebm_bibound::trainer::TrainConfig::from_json(SMALL).unwrap();
    c.validate().unwrap();
}

#[test]
fn train_writes_run_directory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = train(dir.path(), &cfg, &["--set", "train.iterations=100"]);
    let steps = fs::read_to_string(run_dir.join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 100);

    let m: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "completed");
    assert_eq!(m["final_iteration"], 100);
    assert_eq!(m["config"]["train"]["iterations"], 100);
    assert_eq!(m["config_raw"], SMALL);
    assert_eq!(fs::read_to_string(run_dir.join("config.input.json")).unwrap(), SMALL);
    assert_eq!(m["seed"], 0);
    assert!(m["started_at"].is_string() && m["finished_at"].is_string());
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(files.contains(&"steps.jsonl"));
    assert!(files.contains(&"checkpoints/gen_final.json"));
}

#[test]
fn missing_dataset_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"dataset": {}}"#);
    let out = run(&["train", "--config", &cfg, "--out-dir", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.kind"));
    assert!(!dir.path().join("r").exists());

    let cfg = write_config(dir.path(), SMALL);
    let out = run(&["train", "--config", &cfg, "--set", "train.batch_size=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
}

#[test]
fn seed_flag_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok_json(&run(&["train", "--config", &cfg, "--seed", "7", "--out-dir", out.to_str().unwrap()]));
        logs.push(fs::read_to_string(out.join("steps.jsonl")).unwrap());
        let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["seed"], 7);
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn out_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let root = dir.path().join("root");
    let out = bin()
        .args(["train", "--config", &cfg, "--seed", "3"])
        .env("EBM_BIBOUND_OUT", &root)
        .output()
        .unwrap();
    ok_json(&out);
    assert!(root.join("toy25-seed3").join("manifest.json").exists());
}

#[test]
fn runtime_failure_marks_manifest_failed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = dir.path().join("run");
    // a file where the checkpoint directory should go
    fs::create_dir_all(&run_dir).unwrap();
    fs::write(run_dir.join("checkpoints"), "").unwrap();
    let out = run(&["train", "--config", &cfg, "--out-dir", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let m: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert!(m["error"].is_string());
}

#[test]
fn resume_extends_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = train(dir.path(), &cfg, &[]);
    let r = run_dir.to_str().unwrap();
    ok_json(&run(&["resume", "--out-dir", r, "--set", "train.iterations=40"]));
    let steps = fs::read_to_string(run_dir.join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 40);
    let m: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "completed");
    assert_eq!(m["config"]["train"]["iterations"], 40);
    assert_eq!(m["resumes"].as_array().unwrap().len(), 1);

    let out = run(&["resume", "--out-dir", r, "--set", "train.iterations=60", "--set", "seed=5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn eval_density_resolution_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = train(dir.path(), &cfg, &[]);
    let ckpt = run_dir.join("checkpoints").join("energy_final.json");
    let csv = dir.path().join("d.csv");
    let s = ok_json(&run(&[
        "eval", "density", "--ckpt", ckpt.to_str().unwrap(), "--range", "-4", "4", "--res", "200",
        "--out", csv.to_str().unwrap(),
    ]));
    assert_eq!(s["rows"], 40_000);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 40_001);
    assert_eq!(text.lines().next().unwrap(), "x,y,density");

    // a generator checkpoint is not an energy
    let gen = run_dir.join("checkpoints").join("gen_final.json");
    let out = run(&["eval", "density", "--ckpt", gen.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("arch.kind"));
}

#[test]
fn eval_rejects_architecture_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = train(dir.path(), &cfg, &[]);
    let gen = run_dir.join("checkpoints").join("gen_final.json");
    let other = dir.path().join("full.json");
    fs::write(&other, r#"{"dataset": {"kind": "gaussians25"}}"#).unwrap();
    let out = run(&["eval", "modes", "--ckpt", gen.to_str().unwrap(), "--config", other.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("arch.widths"));

    let s = ok_json(&run(&[
        "eval", "modes", "--ckpt", gen.to_str().unwrap(), "--config", &cfg, "--samples", "2000",
    ]));
    assert_eq!(s["modes"], 25);
    assert!(s["kl"].as_f64().unwrap() >= 0.0);
}

#[test]
fn eval_entropy_one_row_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = train(dir.path(), &cfg, &[]);
    let pattern = run_dir.join("checkpoints").join("gen_00*.json");
    let csv = dir.path().join("e.csv");
    let s = ok_json(&run(&[
        "eval", "entropy", "--ckpt-glob", pattern.to_str().unwrap(), "--samples", "50",
        "--out", csv.to_str().unwrap(),
    ]));
    // iterations 0, 10 and 20
    assert_eq!(s["rows"], 3);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "checkpoint,exact,lobpcg,high_precision,hutchinson");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("gen_0000000,"));
}

#[test]
fn eval_anisotropy_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = train(dir.path(), &cfg, &[]);
    let gen = run_dir.join("checkpoints").join("gen_final.json");
    let s = ok_json(&run(&["eval", "anisotropy", "--ckpt", gen.to_str().unwrap(), "--samples", "100"]));
    assert!(s["mean"].as_f64().unwrap() >= 0.0);
    assert!(s["std"].as_f64().unwrap() >= 0.0);
}

#[test]
fn eval_ood_separated_scores() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "score\n0.9\n0.8\n0.95\n").unwrap();
    fs::write(&b, "score\n0.1\n0.2\n").unwrap();
    let s = ok_json(&run(&["eval", "ood", "--in-scores", a.to_str().unwrap(), "--out-scores", b.to_str().unwrap()]));
    assert_eq!(s["auroc"], 1.0);
    assert_eq!(s["auprc"], 1.0);
    assert_eq!(s["fpr80"], 0.0);

    fs::write(&b, "0.1\nnot-a-number\n").unwrap();
    let out = run(&["eval", "ood", "--in-scores", a.to_str().unwrap(), "--out-scores", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
