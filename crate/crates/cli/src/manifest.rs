use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use ebm_bibound::{Error, Result};
use serde_json::{json, Value};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Byte-for-byte copy of the config file the run was started from.
pub const INPUT_CONFIG_FILE: &str = "config.input.json";

pub fn now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::Io { path: tmp.clone(), source: e })?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::Io { path: tmp.clone(), source: e })?;
    fs::rename(&tmp, path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Relative paths and sizes of every file under `dir`, sorted.
fn inventory(dir: &Path) -> Vec<Value> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, u64)>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if let Ok(meta) = e.metadata() {
                let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                if rel != MANIFEST_FILE {
                    out.push((rel, meta.len()));
                }
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files);
    files.sort();
    files
        .into_iter()
        .map(|(path, bytes)| json!({"path": path, "bytes": bytes}))
        .collect()
}

/// The run manifest, rewritten atomically at every status change.
pub struct Manifest {
    path: PathBuf,
    dir: PathBuf,
    doc: Value,
}

impl Manifest {
    pub fn start(dir: &Path, config_raw: &str, merged: &Value, seed: u64, overrides: &[String]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        write_atomic(&dir.join(INPUT_CONFIG_FILE), config_raw.as_bytes())?;
        let m = Manifest {
            path: dir.join(MANIFEST_FILE),
            dir: dir.to_path_buf(),
            doc: json!({
                "status": "running",
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
                "config_raw": config_raw,
                "overrides": overrides,
                "config": merged,
                "started_at": now(),
                "finished_at": null,
                "error": null,
                "files": [],
            }),
        };
        m.write()?;
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let doc = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        Ok(Manifest { path, dir: dir.to_path_buf(), doc })
    }

    pub fn merged_config(&self) -> &Value {
        &self.doc["config"]
    }

    /// Marks a continuation: status back to running, with the new merged
    /// config and the time it started.
    pub fn resume(&mut self, merged: &Value, overrides: &[String]) -> Result<()> {
        self.doc["status"] = json!("running");
        self.doc["config"] = merged.clone();
        self.doc["finished_at"] = Value::Null;
        self.doc["error"] = Value::Null;
        let entry = json!({"started_at": now(), "overrides": overrides});
        match self.doc.get_mut("resumes").and_then(Value::as_array_mut) {
            Some(list) => list.push(entry),
            None => self.doc["resumes"] = json!([entry]),
        }
        self.write()
    }

    pub fn finish(&mut self, outcome: std::result::Result<u64, &Error>) -> Result<()> {
        match outcome {
            Ok(iteration) => {
                self.doc["status"] = json!("completed");
                self.doc["final_iteration"] = json!(iteration);
            }
            Err(e) => {
                self.doc["status"] = json!("failed");
                self.doc["error"] = json!(e.to_string());
            }
        }
        self.doc["finished_at"] = json!(now());
        self.doc["files"] = Value::Array(inventory(&self.dir));
        self.write()
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.doc).expect("manifest serializes");
        write_atomic(&self.path, text.as_bytes())
    }
}
