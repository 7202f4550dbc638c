use std::fs;
use std::path::{Path, PathBuf};

use ebm_bibound::trainer::{self, TrainConfig};
use ebm_bibound::{Error, Result};
use serde_json::{json, Value};

use crate::manifest::Manifest;
use crate::overrides;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "EBM_BIBOUND_OUT";
const DEFAULT_OUT_ROOT: &str = "runs";

fn merge(base: Value, sets: &[String], seed: Option<u64>) -> Result<(Value, TrainConfig)> {
    let mut merged = base;
    for s in sets {
        let (key, value) = overrides::parse(s)?;
        overrides::apply(&mut merged, &key, value)?;
    }
    if let Some(seed) = seed {
        overrides::apply(&mut merged, "seed", json!(seed))?;
    }
    let config = TrainConfig::from_json(&merged.to_string())?;
    config.validate()?;
    // canonical form: defaults filled in
    let merged = serde_json::to_value(&config).expect("config serializes");
    Ok((merged, config))
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub sets: &'a [String],
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

fn default_out_dir(config_path: &Path, seed: u64) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
    let stem = config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    root.join(format!("{stem}-seed{seed}"))
}

/// Returns the run directory, and the error when training failed after the
/// manifest was written.
pub fn cmd_train(args: TrainArgs) -> Result<PathBuf> {
    let raw = fs::read_to_string(args.config).map_err(|e| Error::Config {
        field: "--config".into(),
        reason: format!("{}: {e}", args.config.display()),
    })?;
    let base: Value = serde_json::from_str(&raw).map_err(|e| Error::Config {
        field: "--config".into(),
        reason: format!("{}: {e}", args.config.display()),
    })?;
    let (merged, config) = merge(base, args.sets, args.seed)?;
    let dir = args.out_dir.unwrap_or_else(|| default_out_dir(args.config, config.seed));
    let mut overrides = args.sets.to_vec();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut manifest = Manifest::start(&dir, &raw, &merged, config.seed, &overrides)?;
    let outcome = trainer::train(&config, &dir);
    finish(&mut manifest, outcome)?;
    Ok(dir)
}

pub fn cmd_resume(dir: &Path, sets: &[String]) -> Result<PathBuf> {
    let mut manifest = Manifest::load(dir)?;
    let (merged, config) = merge(manifest.merged_config().clone(), sets, None)?;
    manifest.resume(&merged, sets)?;
    let outcome = trainer::resume(dir, &config);
    finish(&mut manifest, outcome)?;
    Ok(dir.to_path_buf())
}

fn finish(manifest: &mut Manifest, outcome: Result<trainer::RunSummary>) -> Result<()> {
    match outcome {
        Ok(summary) => manifest.finish(Ok(summary.final_iteration)),
        Err(e) => {
            manifest.finish(Err(&e))?;
            Err(e)
        }
    }
}
