//! Evaluation harnesses: density grids, mode counting, the entropy-estimator
//! comparison, the anisotropy index and OOD metrics.

mod ood;

pub use ood::{ood_metrics, OodReport};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mapping, Tensor};
use crate::bounds::{self, gaussian_probes, HutchinsonConfig};
use crate::data::Sampler;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::spectral::LobpcgConfig;

/// Unnormalized density `exp(−E)` on a rectangular grid, row-major with `x`
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

/// `r` points from `lo` to `hi`, mirrored exactly about the midpoint.
fn axis(lo: f64, hi: f64, r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let m = (r - 1) as f64;
    (0..r)
        .map(|i| c + h * ((2 * i) as f64 - m) / m)
        .collect()
}

pub fn density_grid<E: Mapping<f64> + ?Sized>(
    energy: &E,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
) -> Result<DensityGrid> {
    if energy.input_dim() != 2 || energy.output_dim() != 1 {
        return Err(Error::config(
            "energy",
            format!("density grids need a 2-d energy, got {} → {}", energy.input_dim(), energy.output_dim()),
        ));
    }
    if resolution < 1 {
        return Err(Error::config("resolution", "must be at least 1"));
    }
    let xs = axis(x_range.0, x_range.1, resolution);
    let ys = axis(y_range.0, y_range.1, resolution);
    let mut values = Vec::with_capacity(resolution * resolution);
    // one row of the grid per batch
    for &y in &ys {
        let pts: Vec<f64> = xs.iter().flat_map(|&x| [x, y]).collect();
        let e = energy.apply(&Tensor::new(vec![resolution, 2], pts)?)?;
        values.extend(e.data().iter().map(|v| (-v).exp()));
    }
    Ok(DensityGrid { xs, ys, values })
}

impl DensityGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }

    /// Grid point of largest density inside the square of half-width `half`
    /// around each center.
    pub fn cell_maxima(&self, centers: &[Vec<f64>], half: f64) -> Vec<Option<[f64; 2]>> {
        centers
            .iter()
            .map(|c| {
                let mut best: Option<([f64; 2], f64)> = None;
                for (iy, &y) in self.ys.iter().enumerate() {
                    if (y - c[1]).abs() > half {
                        continue;
                    }
                    for (ix, &x) in self.xs.iter().enumerate() {
                        if (x - c[0]).abs() > half {
                            continue;
                        }
                        let v = self.value(ix, iy);
                        if best.is_none_or(|(_, b)| v > b) {
                            best = Some(([x, y], v));
                        }
                    }
                }
                best.map(|(p, _)| p)
            })
            .collect()
    }

    /// CSV with header `x,y,density`, one row per grid point.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_io = |e: csv::Error| Error::io(path, e.into());
        w.write_record(["x", "y", "density"]).map_err(to_io)?;
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                w.write_record([x.to_string(), y.to_string(), self.value(ix, iy).to_string()])
                    .map_err(to_io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub modes_captured: usize,
    /// `Σ q_k log(K q_k)` over the assigned samples; `log K` when nothing is
    /// assigned.
    pub kl: f64,
    pub unassigned_fraction: f64,
}

/// Mode statistics of given points.
pub fn mode_report_points(sampler: &Sampler, points: &Tensor<f64>) -> Result<ModeReport> {
    let labels = sampler.mode_assign(points)?;
    let k = sampler.means().map_or(0, |m| m.len());
    let mut counts = vec![0usize; k];
    for l in labels.iter().flatten() {
        counts[*l] += 1;
    }
    let assigned: usize = counts.iter().sum();
    let kf = k as f64;
    let kl = if assigned == 0 {
        kf.ln()
    } else {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / assigned as f64;
                q * (q * kf).ln()
            })
            .sum::<f64>()
            .max(0.0)
    };
    Ok(ModeReport {
        modes_captured: counts.iter().filter(|&&c| c > 0).count(),
        kl,
        unassigned_fraction: (labels.len() - assigned) as f64 / labels.len() as f64,
    })
}

/// Mode statistics of `n_samples` generator draws.
pub fn mode_report<G: Mapping<f64> + ?Sized, R: Rng + ?Sized>(
    generator: &G,
    sampler: &Sampler,
    n_samples: usize,
    rng: &mut R,
) -> Result<ModeReport> {
    let k = sampler
        .means()
        .ok_or_else(|| Error::config("dataset.kind", "mode report needs a mixture dataset"))?
        .len();
    if n_samples < k {
        return Err(Error::config("n_samples", format!("must be at least the mode count {k}")));
    }
    let z = gaussian_probes::<f64, _>(rng, n_samples, generator.input_dim());
    mode_report_points(sampler, &generator.apply(&z)?)
}

/// Estimators compared per checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    /// Truncated LOBPCG, as used during training.
    pub truncated: LobpcgConfig,
    pub high_precision: LobpcgConfig,
    pub hutchinson: HutchinsonConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            truncated: LobpcgConfig::default(),
            high_precision: LobpcgConfig::converged(),
            hutchinson: HutchinsonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub checkpoint: String,
    pub exact: f64,
    pub lobpcg: f64,
    pub high_precision: f64,
    pub hutchinson: f64,
}

impl EntropyRow {
    pub fn columns(&self) -> [f64; 4] {
        [self.exact, self.lobpcg, self.high_precision, self.hutchinson]
    }
}

/// All four entropy estimates on the same latent batch, one row per
/// generator.
///
/// The high-precision run continues from the truncated iterates and keeps,
/// per sample, the smaller of the two Rayleigh quotients, so its column never
/// exceeds the truncated one.
pub fn entropy_comparison<G: Mapping<f64>, R: Rng + ?Sized>(
    generators: &[(String, G)],
    z: &Tensor<f64>,
    config: &ComparisonConfig,
    rng: &mut R,
) -> Result<Vec<EntropyRow>> {
    generators
        .iter()
        .map(|(name, g)| {
            let (lobpcg, truncated) = bounds::entropy_lower(g, z, &config.truncated, None, rng)?;
            let warm = bounds::v_min_tensor(&truncated);
            let (_, mut precise) = bounds::entropy_lower(g, z, &config.high_precision, Some(&warm), rng)?;
            for (p, t) in precise.iter_mut().zip(&truncated) {
                if t.s1_hat < p.s1_hat {
                    *p = t.clone();
                }
            }
            Ok(EntropyRow {
                checkpoint: name.clone(),
                exact: bounds::entropy_exact(g, z)?,
                lobpcg,
                high_precision: bounds::entropy_from_spectra(g.input_dim(), &precise)?,
                hutchinson: bounds::entropy_hutchinson_logdet(g, z, &config.hutchinson, rng)?,
            })
        })
        .collect()
}

pub fn write_entropy_csv(rows: &[EntropyRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Fraction of consecutive row pairs whose deltas share one sign across all
/// four columns.
pub fn trend_agreement(rows: &[EntropyRow]) -> f64 {
    if rows.len() < 2 {
        return 1.0;
    }
    let agree = rows
        .windows(2)
        .filter(|w| {
            let (a, b) = (w[0].columns(), w[1].columns());
            let signs: Vec<bool> = (0..4).map(|i| b[i] - a[i] >= 0.0).collect();
            signs.iter().all(|&s| s == signs[0])
        })
        .count();
    agree as f64 / (rows.len() - 1) as f64
}

/// Batch mean and population std of `C_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anisotropy {
    pub mean: f64,
    pub std: f64,
}

/// `C_z`: population std over `i` of the column norms `‖J_z e_i‖`.
pub fn anisotropy_per_sample<G: Mapping<f64> + ?Sized>(generator: &G, z: &Tensor<f64>) -> Result<Vec<f64>> {
    let (n, d) = (z.rows(), z.cols());
    let lin = generator.linearize(z)?;
    let mut norms = vec![vec![0.0; d]; n];
    for i in 0..d {
        let mut e = vec![0.0; n * d];
        for r in 0..n {
            e[r * d + i] = 1.0;
        }
        let col = lin.jvp(&Tensor::new(vec![n, d], e)?)?;
        for (r, nr) in norms.iter_mut().enumerate() {
            nr[i] = col.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        }
    }
    Ok(norms.iter().map(|c| population_std(c)).collect())
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn anisotropy_index<G: Mapping<f64> + ?Sized>(generator: &G, z: &Tensor<f64>) -> Result<Anisotropy> {
    let c = anisotropy_per_sample(generator, z)?;
    Ok(Anisotropy {
        mean: c.iter().sum::<f64>() / c.len() as f64,
        std: population_std(&c),
    })
}
