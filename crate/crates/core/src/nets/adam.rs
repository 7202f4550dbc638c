use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
}

impl AdamConfig {
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::config(
                field,
                "need lr > 0, 0 ≤ beta1, beta2 < 1 and eps > 0",
            ));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Whether the stored moments fit `params`.
    pub fn matches(&self, params: &[&Tensor<T>]) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && self
                .m
                .iter()
                .zip(&self.v)
                .zip(params)
                .all(|((m, v), p)| m.len() == p.numel() && v.len() == p.numel())
    }

    /// One update `θ ← θ − lr·m̂/(√v̂ + ε)`.
    ///
    /// A non-finite gradient entry rejects the whole step; neither the
    /// parameters nor the moments change.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::shape("adam_step", &[self.m.len()], &[grads.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != g.numel() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of parameter {i}"),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            let theta = p.data_mut();
            for j in 0..theta.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
