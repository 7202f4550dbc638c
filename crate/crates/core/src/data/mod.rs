//! Seeded samplers for the toy densities and the synthetic mode-counting set.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Gaussians25,
    SwissRoll,
    Rings,
    SyntheticModes,
    GaussianUnit,
}

/// Dataset description. Parameters that do not apply to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: Option<DatasetKind>,
    /// Grid spacing of `gaussians25`; means lie on `{−2s, −s, 0, s, 2s}²`.
    pub spacing: f64,
    /// Per-mode standard deviation (`gaussians25`, `synthetic_modes`) or
    /// additive noise (`swiss_roll`, `rings`).
    pub std: f64,
    /// Half-width of the square the swiss roll is scaled into.
    pub scale: f64,
    pub radii: Vec<f64>,
    /// Mode count of `synthetic_modes`.
    pub modes: usize,
    /// Ambient dimension of `synthetic_modes` and `gaussian_unit`.
    pub dim: usize,
    /// Minimum pairwise distance between `synthetic_modes` means.
    pub separation: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: None,
            spacing: 2.0,
            std: 0.05,
            scale: 4.0,
            radii: vec![1.0, 2.0, 3.0],
            modes: 25,
            dim: 2,
            separation: 2.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind) -> Self {
        let mut spec = DatasetSpec {
            kind: Some(kind),
            ..DatasetSpec::default()
        };
        match kind {
            DatasetKind::SwissRoll => spec.std = 0.1,
            DatasetKind::SyntheticModes => {
                spec.dim = 8;
                spec.std = 0.25;
                spec.separation = 3.0;
            }
            _ => {}
        }
        spec
    }

    pub fn gaussians25() -> Self {
        Self::new(DatasetKind::Gaussians25)
    }

    pub fn synthetic_modes(modes: usize, dim: usize) -> Self {
        DatasetSpec {
            modes,
            dim,
            ..Self::new(DatasetKind::SyntheticModes)
        }
    }

    pub fn gaussian_unit(dim: usize) -> Self {
        DatasetSpec {
            dim,
            ..Self::new(DatasetKind::GaussianUnit)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> Result<DatasetKind> {
        self.kind.ok_or_else(|| Error::config("dataset.kind", "missing"))
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("dataset.{field}"), format!("must be positive, got {x}")))
            }
        };
        match kind {
            DatasetKind::Gaussians25 => {
                positive("spacing", self.spacing)?;
                if !(self.std >= 0.0) {
                    return Err(Error::config("dataset.std", "must be non-negative"));
                }
            }
            DatasetKind::SwissRoll => {
                positive("scale", self.scale)?;
                positive("std", self.std)?;
            }
            DatasetKind::Rings => {
                positive("std", self.std)?;
                if self.radii.is_empty() {
                    return Err(Error::config("dataset.radii", "needs at least one ring"));
                }
                for &r in &self.radii {
                    positive("radii", r)?;
                }
            }
            DatasetKind::SyntheticModes => {
                positive("std", self.std)?;
                positive("separation", self.separation)?;
                if self.modes < 1 {
                    return Err(Error::config("dataset.modes", "must be at least 1"));
                }
                if self.dim < 1 {
                    return Err(Error::config("dataset.dim", "must be at least 1"));
                }
                if self.separation < 6.0 * self.std {
                    return Err(Error::config(
                        "dataset.separation",
                        format!("{} is below 6 × std = {}", self.separation, 6.0 * self.std),
                    ));
                }
            }
            DatasetKind::GaussianUnit => {
                if self.dim < 1 {
                    return Err(Error::config("dataset.dim", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(match self.kind()? {
            DatasetKind::Gaussians25 | DatasetKind::SwissRoll | DatasetKind::Rings => 2,
            DatasetKind::SyntheticModes | DatasetKind::GaussianUnit => self.dim,
        })
    }

    /// Mode means, for the kinds that have them.
    pub fn means(&self) -> Result<Option<Vec<Vec<f64>>>> {
        self.validate()?;
        Ok(match self.kind()? {
            DatasetKind::Gaussians25 => {
                let grid: Vec<f64> = (-2..=2).map(|i| i as f64 * self.spacing).collect();
                Some(
                    grid.iter()
                        .flat_map(|&x| grid.iter().map(move |&y| vec![x, y]))
                        .collect(),
                )
            }
            DatasetKind::SyntheticModes => Some(self.synthetic_means()?),
            _ => None,
        })
    }

    /// Rejection sampling in a cube sized so `modes` points fit at the
    /// requested separation. The stream is fixed by `seed` alone.
    fn synthetic_means(&self) -> Result<Vec<Vec<f64>>> {
        let (k, d, sep) = (self.modes, self.dim, self.separation);
        let half = sep * (k as f64).powf(1.0 / d as f64).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut attempts = 0usize;
        while means.len() < k {
            attempts += 1;
            if attempts > 1_000_000 {
                return Err(Error::config(
                    "dataset.separation",
                    format!("cannot place {k} means {sep} apart in {d} dimensions"),
                ));
            }
            let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-half..half)).collect();
            let ok = means.iter().all(|m| {
                m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= sep * sep
            });
            if ok {
                means.push(cand);
            }
        }
        Ok(means)
    }
}

/// Sampler holding the precomputed means of a dataset.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: DatasetSpec,
    kind: DatasetKind,
    dim: usize,
    means: Option<Vec<Vec<f64>>>,
}

impl Sampler {
    pub fn new(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Sampler {
            spec: spec.clone(),
            kind: spec.kind()?,
            dim: spec.dim()?,
            means: spec.means()?,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn means(&self) -> Option<&[Vec<f64>]> {
        self.means.as_deref()
    }

    /// `n` i.i.d. draws from `rng`.
    pub fn sample_with<T: Real, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor<T>> {
        if n < 1 {
            return Err(Error::config("n", "must be at least 1"));
        }
        let s = &self.spec;
        let d = self.dim;
        let mut out = Vec::with_capacity(n * d);
        let noise = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        for _ in 0..n {
            match self.kind {
                DatasetKind::Gaussians25 | DatasetKind::SyntheticModes => {
                    let means = self.means.as_ref().expect("kind has means");
                    let m = &means[rng.random_range(0..means.len())];
                    for &mu in m {
                        out.push(mu + s.std * noise(rng));
                    }
                }
                DatasetKind::SwissRoll => {
                    let t = rng.random_range(1.5 * PI..4.5 * PI);
                    let f = s.scale / (4.5 * PI);
                    out.push(t * t.cos() * f + s.std * noise(rng));
                    out.push(t * t.sin() * f + s.std * noise(rng));
                }
                DatasetKind::Rings => {
                    let r = s.radii[rng.random_range(0..s.radii.len())];
                    let a = rng.random_range(0.0..2.0 * PI);
                    out.push(r * a.cos() + s.std * noise(rng));
                    out.push(r * a.sin() + s.std * noise(rng));
                }
                DatasetKind::GaussianUnit => {
                    for _ in 0..d {
                        out.push(noise(rng));
                    }
                }
            }
        }
        Tensor::new(vec![n, d], out.into_iter().map(T::lit).collect())
    }

    /// `n` draws from the stream fixed by the spec's seed.
    pub fn sample<T: Real>(&self, n: usize) -> Result<Tensor<T>> {
        self.sample_with(n, &mut ChaCha8Rng::seed_from_u64(self.spec.seed))
    }

    /// Nearest-mean label, or `None` outside [`coverage_radius`] of every mean.
    pub fn mode_assign<T: Real>(&self, points: &Tensor<T>) -> Result<Vec<Option<usize>>> {
        let means = self
            .means
            .as_ref()
            .ok_or_else(|| Error::config("dataset.kind", "mode assignment needs a mixture dataset"))?;
        if points.rank() != 2 || points.cols() != self.dim {
            return Err(Error::shape("mode_assign", &[points.rows(), self.dim], points.shape()));
        }
        let r2 = (coverage_radius(self.dim) * self.spec.std).powi(2);
        Ok((0..points.rows())
            .map(|i| {
                let p = points.row(i);
                let (best, dist) = means
                    .iter()
                    .map(|m| {
                        m.iter()
                            .zip(p)
                            .map(|(a, b)| (a - b.to_f64_lossy()).powi(2))
                            .sum::<f64>()
                    })
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (k, d)| if d < acc.1 { (k, d) } else { acc });
                (dist <= r2).then_some(best)
            })
            .collect())
    }
}

/// Tail mass outside the coverage radius: `2Φ(−3)`.
pub fn three_sigma_tail() -> f64 {
    2.0 * Normal::standard().cdf(-3.0)
}

/// Radius, in units of the per-mode std, holding `1 − 2Φ(−3)` of an
/// isotropic Gaussian in `dim` dimensions. Equals 3 for `dim = 1`.
pub fn coverage_radius(dim: usize) -> f64 {
    ChiSquared::new(dim as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - three_sigma_tail())
        .sqrt()
        .max(3.0)
}

/// Convenience wrapper over [`Sampler::sample`].
pub fn sample<T: Real>(spec: &DatasetSpec, n: usize) -> Result<Tensor<T>> {
    Sampler::new(spec)?.sample(n)
}

/// Convenience wrapper over [`Sampler::mode_assign`].
pub fn mode_assign<T: Real>(spec: &DatasetSpec, points: &Tensor<T>) -> Result<Vec<Option<usize>>> {
    Sampler::new(spec)?.mode_assign(points)
}

/// Writes rows of `points` as CSV with header `x1,…,xD`.
pub fn write_csv<T: Real>(points: &Tensor<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=points.cols()).map(|i| format!("x{i}")).collect();
    let to_io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(&header).map_err(to_io)?;
    for i in 0..points.rows() {
        w.write_record(points.row(i).iter().map(|x| x.to_f64_lossy().to_string()))
            .map_err(to_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    crate::fsutil::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests;
