use serde::{Deserialize, Serialize};

use super::Mode;
use crate::bounds::BoundReport;
use crate::spectral::SpectralEstimate;

/// Minimum, mean and maximum over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut n = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            n += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (n > 0).then(|| Stats {
            min,
            mean: sum / n as f64,
            max,
        })
    }

    fn is_finite(&self) -> bool {
        self.min.is_finite() && self.mean.is_finite() && self.max.is_finite()
    }
}

/// One line of `steps.jsonl`. Wall-clock times go to a separate file so
/// that this record is reproducible bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: u64,
    pub mode: Mode,
    /// Absent in the WGAN ablation, which has no entropy term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundReport>,
    /// Lower bound, or the critic objective in the WGAN ablation.
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_gp: Option<f64>,
    pub energy_loss: f64,
    pub generator_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1_hat: Option<Stats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lobpcg_iterations: Option<Stats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged_fraction: Option<f64>,
}

impl StepLog {
    pub(super) fn empty(iteration: u64, mode: Mode) -> Self {
        StepLog {
            iteration,
            mode,
            bounds: None,
            objective: 0.0,
            zero_gp: None,
            energy_loss: 0.0,
            generator_loss: 0.0,
            s1_hat: None,
            lobpcg_iterations: None,
            converged_fraction: None,
        }
    }

    pub(super) fn record_spectra(&mut self, spectra: &[SpectralEstimate<f64>]) {
        self.s1_hat = Stats::of(spectra.iter().map(|e| e.s1_hat));
        self.lobpcg_iterations = Stats::of(spectra.iter().map(|e| e.iterations as f64));
        if !spectra.is_empty() {
            let c = spectra.iter().filter(|e| e.converged).count();
            self.converged_fraction = Some(c as f64 / spectra.len() as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        let b = self.bounds.map_or(true, |b| {
            [b.data_energy, b.sample_energy, b.entropy_term, b.lower, b.penalty, b.hinge, b.upper]
                .iter()
                .all(|x| x.is_finite())
        });
        b && self.objective.is_finite()
            && self.zero_gp.map_or(true, f64::is_finite)
            && self.energy_loss.is_finite()
            && self.generator_loss.is_finite()
            && self.s1_hat.map_or(true, |s| s.is_finite())
    }
}

/// Iteration number of a log line, without parsing the rest.
pub(super) fn line_iteration(line: &str) -> Option<u64> {
    #[derive(Deserialize)]
    struct Head {
        iteration: u64,
    }
    serde_json::from_str::<Head>(line).ok().map(|h| h.iteration)
}
