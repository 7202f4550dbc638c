use rand::Rng;
use serde::{Deserialize, Serialize};

use super::base_entropy;
use crate::autodiff::{Mapping, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::random_unit;

/// Settings of the stochastic log-determinant estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HutchinsonConfig {
    /// Number of series terms.
    pub order: usize,
    /// Rademacher probes per sample.
    pub probes: usize,
    /// Multiplier on the power-iteration estimate of the largest eigenvalue.
    pub safety: f64,
    /// Fixed spectral scale `c`, bypassing power iteration.
    pub scale: Option<f64>,
    pub power_iterations: usize,
}

impl Default for HutchinsonConfig {
    fn default() -> Self {
        HutchinsonConfig {
            order: 50,
            probes: 128,
            safety: 1.0,
            scale: None,
            power_iterations: 30,
        }
    }
}

fn row_norms<T: Real>(t: &Tensor<T>) -> Vec<T> {
    (0..t.rows())
        .map(|i| t.row(i).iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect()
}

/// Per-sample estimate of `½ log det(JᵀJ)` as
/// `½[d·log c + tr log(JᵀJ/c)]`, with the trace of the matrix logarithm from
/// the series `log(I − B) = −Σ Bᵏ/k`, `B = I − JᵀJ/c`, and Rademacher probes.
/// Only `JᵀJ`-vector products are used.
pub fn hutchinson_logdet_half<T, M, R>(
    g: &M,
    z: &Tensor<T>,
    config: &HutchinsonConfig,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    T: Real,
    M: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    if config.order < 1 || config.probes < 1 {
        return Err(Error::config("hutchinson", "order and probes must be at least 1"));
    }
    let lin = g.linearize(z)?;
    let (n, d) = (z.rows(), z.cols());

    let c: Vec<T> = match config.scale {
        Some(c) if c > 0.0 => vec![T::lit(c); n],
        Some(_) => return Err(Error::config("hutchinson.scale", "must be positive")),
        None => {
            let mut w = Tensor::new(
                vec![n, d],
                (0..n).flat_map(|_| random_unit::<T, _>(rng, d)).collect(),
            )?;
            let mut lam = vec![T::zero(); n];
            for _ in 0..config.power_iterations.max(1) {
                let aw = lin.jtjv(&w)?;
                let wn = row_norms(&w);
                lam = row_norms(&aw);
                for i in 0..n {
                    lam[i] = lam[i] / wn[i];
                }
                let mut next = aw.to_vec();
                for i in 0..n {
                    let inv = if lam[i] > T::zero() { T::one() / lam[i] } else { T::zero() };
                    next[i * d..(i + 1) * d].iter_mut().for_each(|x| *x *= inv);
                }
                w = Tensor::new(vec![n, d], next)?;
            }
            lam.iter().map(|&l| l * T::lit(config.safety)).collect()
        }
    };
    if let Some(i) = c.iter().position(|x| !(*x > T::zero())) {
        return Err(Error::DegenerateJacobian { sample: i, s1: 0.0 });
    }

    // all probes of a sample are stacked as rows of one linearization
    let m = config.probes;
    let tiled: Vec<T> = (0..m).flat_map(|_| z.to_vec()).collect();
    let stacked = g.linearize(&Tensor::new(vec![m * n, d], tiled)?)?;
    let v: Vec<T> = (0..m * n * d)
        .map(|_| if rng.random::<bool>() { T::one() } else { -T::one() })
        .collect();
    let v = Tensor::new(vec![m * n, d], v)?;
    let mut w = v.clone();
    let mut prev = row_norms(&w);
    let mut trace = vec![T::zero(); n];
    let probes = T::from_usize_lossy(m);
    for k in 1..=config.order {
        // w ← B w = w − JᵀJ w / c
        let aw = stacked.jtjv(&w)?;
        let mut next = w.to_vec();
        for r in 0..m * n {
            let ci = c[r % n];
            for j in 0..d {
                next[r * d + j] -= aw.row(r)[j] / ci;
            }
        }
        w = Tensor::new(vec![m * n, d], next)?;
        let norms = row_norms(&w);
        for r in 0..m * n {
            if norms[r] > prev[r] * T::lit(1.0 + 1e-9) {
                return Err(Error::SeriesDivergence { sample: r % n, term: k });
            }
            let vbkv: T = v.row(r).iter().zip(w.row(r)).map(|(&a, &b)| a * b).sum();
            trace[r % n] -= vbkv / (T::from_usize_lossy(k) * probes);
        }
        prev = norms;
    }
    let dd = T::from_usize_lossy(d);
    Ok((0..n)
        .map(|i| (T::lit(0.5) * (dd * c[i].ln() + trace[i])).to_f64_lossy())
        .collect())
}

/// `H[p₀] + mean` of [`hutchinson_logdet_half`].
pub fn entropy_hutchinson_logdet<T, M, R>(
    g: &M,
    z: &Tensor<T>,
    config: &HutchinsonConfig,
    rng: &mut R,
) -> Result<f64>
where
    T: Real,
    M: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    let ld = hutchinson_logdet_half(g, z, config, rng)?;
    Ok(base_entropy(g.input_dim()) + ld.iter().sum::<f64>() / ld.len() as f64)
}
