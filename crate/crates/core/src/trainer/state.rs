use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::AdamState;

/// Optimizer state and configuration stored next to the network checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub iteration: u64,
    pub config: TrainConfig,
    pub generator_adam: AdamState<f64>,
    pub energy_adam: AdamState<f64>,
}

/// Generator, energy and state file names for a checkpoint tag.
pub fn checkpoint_paths(dir: &Path, tag: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("gen_{tag}.json")),
        dir.join(format!("energy_{tag}.json")),
        dir.join(format!("state_{tag}.json")),
    )
}

/// Newest numbered network checkpoint in `dir` and the path of its state
/// file, which must exist.
pub fn latest_checkpoint(dir: &Path) -> Result<(u64, PathBuf)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let newest = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("gen_")?.strip_suffix(".json")?.parse::<u64>().ok()
        })
        .max()
        .ok_or_else(|| Error::Resume(format!("no checkpoints in {}", dir.display())))?;
    let (_, _, state) = checkpoint_paths(dir, &format!("{newest:07}"));
    if !state.exists() {
        return Err(Error::Resume(format!(
            "optimizer state {} is missing; Adam moments cannot be reconstructed, so the \
             continuation would not match the original trajectory",
            state.display()
        )));
    }
    Ok((newest, state))
}

/// First path at which two JSON values differ.
fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => first_difference(u, v, &p),
                    _ => Some(p),
                }
            })
        }
        _ if a == b => None,
        _ => Some(path.to_string()),
    }
}

impl TrainState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        crate::fsutil::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Accepts `config` when it differs from the stored one only in the
    /// iteration budget and output cadence.
    pub fn check_compatible(&self, config: &TrainConfig) -> Result<()> {
        if config.seed != self.config.seed {
            return Err(Error::Resume(format!(
                "seed {} differs from the checkpointed seed {}",
                config.seed, self.config.seed
            )));
        }
        for (name, a, b) in [
            ("generator", &self.config.generator, &config.generator),
            ("energy", &self.config.energy, &config.energy),
        ] {
            if a != b {
                return Err(Error::Resume(format!("{name} architecture differs from the checkpoint")));
            }
        }
        if config.train.iterations < self.iteration {
            return Err(Error::Resume(format!(
                "checkpoint is at iteration {}, beyond the requested {}",
                self.iteration, config.train.iterations
            )));
        }
        let normalize = |c: &TrainConfig| {
            let mut c = c.clone();
            c.train.iterations = 0;
            c.train.log_every = 1;
            c.train.checkpoint_every = 1;
            serde_json::to_value(c).expect("config serializes")
        };
        match first_difference(&normalize(&self.config), &normalize(config), "") {
            Some(field) => Err(Error::Resume(format!("`{field}` differs from the checkpointed run"))),
            None => Ok(()),
        }
    }
}
