use std::fs;
use std::path::{Path, PathBuf};

use ebm_bibound::data::{self, Sampler};
use ebm_bibound::eval::{self, ComparisonConfig};
use ebm_bibound::nets::{load_checkpoint, ArchSpec, NetKind};
use ebm_bibound::trainer::TrainConfig;
use ebm_bibound::{bounds, Error, Mlp, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
    let c = TrainConfig::from_json(&text)?;
    c.validate()?;
    Ok(c)
}

/// Loads a network, checking its kind and, when a config is given, its
/// architecture.
pub fn load_net(path: &Path, kind: NetKind, config: Option<&TrainConfig>) -> Result<Mlp> {
    let expected: Option<&ArchSpec> = config.map(|c| match kind {
        NetKind::Generator => &c.generator,
        NetKind::Energy => &c.energy,
    });
    let net: Mlp = load_checkpoint(path, expected)?;
    if net.kind() != kind {
        return Err(Error::Checkpoint {
            field: "arch.kind".into(),
            expected: format!("{kind:?}"),
            found: format!("{:?}", net.kind()),
        });
    }
    Ok(net)
}

fn sibling(ckpt: &Path, suffix: &str) -> PathBuf {
    let stem = ckpt.file_stem().map_or_else(|| "eval".into(), |s| s.to_string_lossy().into_owned());
    ckpt.with_file_name(format!("{stem}_{suffix}"))
}

pub fn density(ckpt: &Path, config: Option<&TrainConfig>, range: [f64; 2], res: usize, out: Option<PathBuf>) -> Result<Value> {
    let energy = load_net(ckpt, NetKind::Energy, config)?;
    if !(range[0] < range[1]) {
        return Err(config_error("--range", "low end must be below the high end"));
    }
    let grid = eval::density_grid(&energy, (range[0], range[1]), (range[0], range[1]), res)?;
    let out = out.unwrap_or_else(|| sibling(ckpt, "density.csv"));
    grid.write_csv(&out)?;
    let (imax, vmax) = grid
        .values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    Ok(json!({
        "output": out,
        "rows": grid.values.len(),
        "resolution": res,
        "max_density": vmax,
        "argmax": [grid.xs[imax % res], grid.ys[imax / res]],
    }))
}

pub fn modes(ckpt: &Path, config: &TrainConfig, samples: usize, seed: u64, out: Option<PathBuf>) -> Result<Value> {
    let generator = load_net(ckpt, NetKind::Generator, Some(config))?;
    let sampler = Sampler::new(&config.dataset)?;
    if sampler.means().is_none() {
        return Err(config_error("dataset.kind", "mode counting needs a mixture dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = bounds::gaussian_probes::<f64, _>(&mut rng, samples, generator.arch().input_dim());
    let x = generator.forward(&z)?;
    if let Some(out) = &out {
        data::write_csv(&x, out)?;
    }
    let report = eval::mode_report_points(&sampler, &x)?;
    Ok(json!({
        "modes_captured": report.modes_captured,
        "modes": sampler.means().map_or(0, |m| m.len()),
        "kl": report.kl,
        "unassigned_fraction": report.unassigned_fraction,
        "samples": samples,
        "output": out,
    }))
}

pub fn entropy(pattern: &str, config: Option<&TrainConfig>, samples: usize, seed: u64, out: Option<PathBuf>) -> Result<Value> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| config_error("--ckpt-glob", e.to_string()))?
        .filter_map(|p| p.ok())
        .collect();
    if paths.is_empty() {
        return Err(config_error("--ckpt-glob", format!("no files match {pattern}")));
    }
    let mut generators = Vec::with_capacity(paths.len());
    for p in &paths {
        let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        generators.push((name, load_net(p, NetKind::Generator, config)?));
    }
    let d = generators[0].1.arch().input_dim();
    if let Some((name, _)) = generators.iter().find(|(_, g)| g.arch().input_dim() != d) {
        return Err(config_error("--ckpt-glob", format!("{name} has a different latent dimension")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = bounds::gaussian_probes::<f64, _>(&mut rng, samples, d);
    let rows = eval::entropy_comparison(&generators, &z, &ComparisonConfig::default(), &mut rng)?;
    let out = out.unwrap_or_else(|| paths[0].with_file_name("entropy_comparison.csv"));
    eval::write_entropy_csv(&rows, &out)?;
    Ok(json!({
        "output": out,
        "rows": rows.len(),
        "trend_agreement": eval::trend_agreement(&rows),
    }))
}

pub fn anisotropy(ckpt: &Path, config: Option<&TrainConfig>, samples: usize, seed: u64, out: Option<PathBuf>) -> Result<Value> {
    let generator = load_net(ckpt, NetKind::Generator, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = bounds::gaussian_probes::<f64, _>(&mut rng, samples, generator.arch().input_dim());
    let per = eval::anisotropy_per_sample(&generator, &z)?;
    let index = eval::anisotropy_index(&generator, &z)?;
    if let Some(out) = &out {
        let mut w = csv::Writer::from_path(out).map_err(|e| Error::Io { path: out.clone(), source: e.into() })?;
        let io = |e: csv::Error| Error::Io { path: out.clone(), source: e.into() };
        w.write_record(["c_z"]).map_err(io)?;
        for c in &per {
            w.write_record([c.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: out.clone(), source: e })?;
    }
    Ok(json!({"mean": index.mean, "std": index.std, "samples": samples, "output": out}))
}

/// First column of a CSV of scores; a non-numeric first row is a header.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into() })?;
    let mut scores = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into() })?;
        let Some(cell) = rec.get(0).map(str::trim) else { continue };
        match cell.parse::<f64>() {
            Ok(v) => scores.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(config_error(
                    &path.display().to_string(),
                    format!("row {}: `{cell}` is not a number", i + 1),
                ))
            }
        }
    }
    Ok(scores)
}

pub fn ood(in_scores: &Path, out_scores: &Path) -> Result<Value> {
    let a = read_scores(in_scores)?;
    let b = read_scores(out_scores)?;
    let r = eval::ood_metrics(&a, &b)?;
    Ok(json!({"auroc": r.auroc, "auprc": r.auprc, "fpr80": r.fpr80, "n_in": a.len(), "n_out": b.len()}))
}
