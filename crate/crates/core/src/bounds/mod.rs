//! Bounds on the negative log-likelihood and the estimators behind them.
//!
//! The lower bound is `mean E(data) − mean E(G(z)) + H[p_g]`, with the
//! generator entropy replaced by `H[p₀] + d·mean log ŝ₁`. The upper bound adds
//! a hinged gradient penalty `max(0, coeff·penalty − ζ)`.

mod hutchinson;

pub use hutchinson::{entropy_hutchinson_logdet, hutchinson_logdet_half, HutchinsonConfig};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, tangent, Linearization, Mapping, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{self, LobpcgConfig, SpectralEstimate};

/// Singular values at or below this are treated as a collapsed Jacobian.
pub const DEGENERATE_S1: f64 = 1e-12;

/// Entropy of the standard normal in `d` dimensions, `d/2·(1 + log 2π)`.
pub fn base_entropy(d: usize) -> f64 {
    0.5 * d as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln())
}

fn check_degenerate(s1: &[f64]) -> Result<()> {
    match s1.iter().position(|&s| !(s > DEGENERATE_S1)) {
        Some(sample) => Err(Error::DegenerateJacobian {
            sample,
            s1: s1[sample],
        }),
        None => Ok(()),
    }
}

/// `H[p₀] + d·mean log s₁` for given per-sample singular values.
pub fn entropy_from_s1(d: usize, s1: &[f64]) -> Result<f64> {
    check_degenerate(s1)?;
    let mean_log = s1.iter().map(|s| s.ln()).sum::<f64>() / s1.len() as f64;
    Ok(base_entropy(d) + d as f64 * mean_log)
}

pub fn entropy_from_spectra<T: Real>(d: usize, spectra: &[SpectralEstimate<T>]) -> Result<f64> {
    let s1: Vec<f64> = spectra.iter().map(|e| e.s1_hat.to_f64_lossy()).collect();
    entropy_from_s1(d, &s1)
}

/// Entropy lower bound with `ŝ₁` from LOBPCG, plus the per-sample estimates.
pub fn entropy_lower<T, M, R>(
    g: &M,
    z: &Tensor<T>,
    config: &LobpcgConfig,
    v0: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<(f64, Vec<SpectralEstimate<T>>)>
where
    T: Real,
    M: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    let spectra = spectral::smallest_singular(g, z, config, v0, rng)?;
    Ok((entropy_from_spectra(g.input_dim(), &spectra)?, spectra))
}

/// Entropy lower bound with the exact `s₁` from the SVD oracle.
pub fn entropy_lower_exact<T: Real, M: Mapping<T> + ?Sized>(g: &M, z: &Tensor<T>) -> Result<f64> {
    entropy_from_s1(g.input_dim(), &spectral::exact_smallest_singular(g, z)?)
}

/// `H[p₀] + mean ½ log det(JᵀJ)` from exact Jacobians.
pub fn entropy_exact<T: Real, M: Mapping<T> + ?Sized>(g: &M, z: &Tensor<T>) -> Result<f64> {
    let ld = spectral::exact_logdet_half(g, z)?;
    Ok(base_entropy(g.input_dim()) + ld.iter().sum::<f64>() / ld.len() as f64)
}

/// Stacks per-sample unit vectors into an `[n, d]` tensor.
pub fn v_min_tensor<T: Real>(spectra: &[SpectralEstimate<T>]) -> Tensor<T> {
    let d = spectra.first().map_or(0, |e| e.v_min.len());
    let data = spectra.iter().flat_map(|e| e.v_min.iter().copied()).collect();
    Tensor::new(vec![spectra.len(), d], data).expect("equal-length eigenvectors")
}

/// `½ log ‖J_z v‖²` per row, recorded on the tape of `y = G(z)` with `v`
/// held fixed. At a unit eigenvector of the smallest eigenvalue this is
/// `log s₁`, and its derivative is the frozen-eigenvector surrogate for
/// `∇ log s₁`. Returns `[n]`; detached when `J v` does not depend on anything
/// attached.
pub fn log_s1_surrogate<T: Real>(y: &Tensor<T>, z: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let jv = tangent(y, &[(z, v)], true)?;
    jv.square()?.sum_cols()?.log()?.scale(T::lit(0.5))
}

/// `∇_z log p_g(G(z))` under the bound: `−z − d·∇_z log ŝ₁(z)`, with the
/// second term from the frozen-eigenvector surrogate.
pub fn log_pg_grad_z<T: Real, M: Mapping<T> + ?Sized>(
    g: &M,
    z: &Tensor<T>,
    spectra: &[SpectralEstimate<T>],
) -> Result<Tensor<T>> {
    let s1: Vec<f64> = spectra.iter().map(|e| e.s1_hat.to_f64_lossy()).collect();
    check_degenerate(&s1)?;
    let z = z.detach();
    let tape = g.tape().unwrap_or_default();
    let zv = tape.variable(&z);
    let y = g.apply(&zv)?;
    let s = log_s1_surrogate(&y, &zv, &v_min_tensor(spectra))?;
    let d = T::from_usize_lossy(g.input_dim());
    let neg_z = z.neg()?;
    if !s.is_attached() {
        return Ok(neg_z);
    }
    let gz = grad(&s.sum()?, &[&zv], false)?.remove(0);
    neg_z.sub(&gz.scale(d)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpperBoundConfig {
    /// Penalty coefficient standing in for `M/s₁ᵖ`; `None` means `0.001/d`.
    pub coeff: Option<f64>,
    /// Exponent of the bound; only 2 is supported.
    pub p: u32,
    /// Hinge margin.
    pub zeta: f64,
    /// Probes per sample.
    pub n_hutchinson: usize,
    /// Additive constant of the bound, reported but never optimized.
    pub m_const: f64,
}

impl Default for UpperBoundConfig {
    fn default() -> Self {
        UpperBoundConfig {
            coeff: None,
            p: 2,
            zeta: 1.0,
            n_hutchinson: 1,
            m_const: 0.0,
        }
    }
}

impl UpperBoundConfig {
    pub fn coeff(&self, d: usize) -> f64 {
        self.coeff.unwrap_or(0.001 / d as f64)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if let Some(c) = self.coeff {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!("{field}.coeff"), "must be positive"));
            }
        }
        if self.p != 2 {
            return Err(Error::config(format!("{field}.p"), "only p = 2 is supported"));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::config(format!("{field}.zeta"), "must be non-negative"));
        }
        if self.n_hutchinson < 1 {
            return Err(Error::config(format!("{field}.n_hutchinson"), "must be at least 1"));
        }
        Ok(())
    }
}

/// Standard normal probe matrix.
pub fn gaussian_probes<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Tensor<T> {
    let data = (0..n * d)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(vec![n, d], data).expect("n·d values")
}

/// Penalty with the generator already linearized at `z`.
///
/// For each sample and probe `v ~ N(0, I_d)` the term is
/// `(∇ₓE(G(z))·J_z v + ∇_z log p_g·v)²`; the result is the mean over samples
/// and probes, recorded on the energy's tape so it can be differentiated
/// with respect to the energy parameters. `grad_z` is [`log_pg_grad_z`].
pub fn penalty_on<T, E, R>(
    energy: &E,
    lin: &Linearization<T>,
    grad_z: &Tensor<T>,
    n_probes: usize,
    rng: &mut R,
) -> Result<Tensor<T>>
where
    T: Real,
    E: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    let (n, d) = (grad_z.rows(), grad_z.cols());
    let tape = energy.tape().unwrap_or_default();
    let x = tape.variable(&lin.value());
    let e = energy.apply(&x)?;
    let mut terms = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let v = gaussian_probes::<T, _>(rng, n, d);
        let jv = lin.jvp(&v)?;
        let de = if e.is_attached() {
            tangent(&e, &[(&x, &jv)], true)?
        } else {
            Tensor::zeros(vec![n, 1])
        };
        let gv = grad_z.row_dot(&v)?;
        terms.push(de.reshape(&[n])?.add(&gv)?.square()?);
    }
    let refs: Vec<&Tensor<T>> = terms.iter().collect();
    let pen = Tensor::concat(&refs, 0)?.mean()?;
    if !pen.all_finite() {
        return Err(Error::NonFinite {
            what: "penalty term".into(),
        });
    }
    Ok(pen)
}

/// Penalty term of the upper bound at latent batch `z` (pre-coefficient).
pub fn penalty_term<T, E, G, R>(
    energy: &E,
    generator: &G,
    z: &Tensor<T>,
    spectra: &[SpectralEstimate<T>],
    config: &UpperBoundConfig,
    rng: &mut R,
) -> Result<Tensor<T>>
where
    T: Real,
    E: Mapping<T> + ?Sized,
    G: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    let lin = Linearization::new(|x| generator.apply(x), z)?;
    let gz = log_pg_grad_z(generator, z, spectra)?;
    penalty_on(energy, &lin, &gz, config.n_hutchinson, rng)
}

/// All terms of the bounds for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub data_energy: f64,
    pub sample_energy: f64,
    pub entropy_term: f64,
    pub lower: f64,
    pub penalty: f64,
    pub hinge: f64,
    pub upper: f64,
    pub m_const: f64,
}

impl BoundReport {
    /// Lower bound only; `upper` equals `lower` until [`upper_bound`] fills in
    /// the penalty.
    pub fn lower_only(data_energy: f64, sample_energy: f64, entropy_term: f64) -> Self {
        let lower = data_energy - sample_energy + entropy_term;
        BoundReport {
            data_energy,
            sample_energy,
            entropy_term,
            lower,
            penalty: 0.0,
            hinge: 0.0,
            upper: lower,
            m_const: 0.0,
        }
    }

    /// `mean E(data) − mean E(G(z))`, the critic objective without entropy.
    pub fn energy_gap(&self) -> f64 {
        self.data_energy - self.sample_energy
    }
}

fn mean_energy<T: Real, E: Mapping<T> + ?Sized>(energy: &E, x: &Tensor<T>) -> Result<f64> {
    let e = energy.apply(&x.detach())?;
    Ok(e.mean()?.item()?.to_f64_lossy())
}

/// Lower bound from the data batch and latent batch; also returns the
/// spectral estimates used for the entropy term.
pub fn lower_bound<T, E, G, R>(
    energy: &E,
    generator: &G,
    data: &Tensor<T>,
    z: &Tensor<T>,
    config: &LobpcgConfig,
    v0: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<(BoundReport, Vec<SpectralEstimate<T>>)>
where
    T: Real,
    E: Mapping<T> + ?Sized,
    G: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    if data.rows() == 0 || z.rows() == 0 {
        return Err(Error::domain("lower_bound", "empty batch"));
    }
    let (entropy, spectra) = entropy_lower(generator, z, config, v0, rng)?;
    let x = generator.apply(&z.detach())?;
    Ok((
        BoundReport::lower_only(mean_energy(energy, data)?, mean_energy(energy, &x)?, entropy),
        spectra,
    ))
}

/// Completes a report with the hinged penalty: `upper = lower + max(0,
/// coeff·penalty − ζ)`.
pub fn upper_bound(report: &BoundReport, penalty: f64, coeff: f64, config: &UpperBoundConfig) -> BoundReport {
    let hinge = (coeff * penalty - config.zeta).max(0.0);
    BoundReport {
        penalty,
        hinge,
        upper: report.lower + hinge,
        m_const: config.m_const,
        ..*report
    }
}

/// Mean of `‖∇ₓE(x)‖²` over the rows of `data` and `generated` together,
/// recorded on the energy's tape.
pub fn zero_gp_penalty<T: Real, E: Mapping<T> + ?Sized>(
    energy: &E,
    data: &Tensor<T>,
    generated: &Tensor<T>,
) -> Result<Tensor<T>> {
    let both = Tensor::concat(&[&data.detach(), &generated.detach()], 0)?;
    if both.rows() == 0 {
        return Err(Error::domain("zero_gp_penalty", "empty batch"));
    }
    let tape = energy.tape().unwrap_or_default();
    let x = tape.variable(&both);
    let e = energy.apply(&x)?.sum()?;
    if !e.is_attached() {
        return Ok(Tensor::scalar(T::zero()));
    }
    let gx = grad(&e, &[&x], true)?.remove(0);
    gx.square()?
        .sum()?
        .scale(T::one() / T::from_usize_lossy(both.rows()))
}

/// Critic objective of the WGAN ablation: `mean E(data) − mean E(G(z))`.
pub fn wgan_objective<T: Real, E: Mapping<T> + ?Sized>(
    energy: &E,
    data: &Tensor<T>,
    generated: &Tensor<T>,
) -> Result<f64> {
    Ok(mean_energy(energy, data)? - mean_energy(energy, generated)?)
}

#[cfg(test)]
mod tests;
