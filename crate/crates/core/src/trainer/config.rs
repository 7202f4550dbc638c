use serde::{Deserialize, Serialize};

use crate::bounds::UpperBoundConfig;
use crate::data::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::nets::{Activation, AdamConfig, ArchSpec, NetKind};
use crate::spectral::LobpcgConfig;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Upper bound for the energy, lower bound for the generator.
    #[serde(rename = "ebm_bb")]
    EbmBb,
    /// Hinged penalty replaced by a zero-centered gradient penalty.
    #[serde(rename = "ebm_0gp")]
    Ebm0gp,
    /// No entropy term; critic with a zero-centered gradient penalty.
    #[serde(rename = "wgan_0gp")]
    Wgan0gp,
}

/// Loop length, batch size, alternation and output cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub iterations: u64,
    pub batch_size: usize,
    pub mode: Mode,
    /// Energy updates per iteration.
    pub energy_steps: usize,
    /// Generator updates per iteration.
    pub generator_steps: usize,
    /// Weight of the zero-centered penalty in the ablation modes.
    pub gp_weight: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            iterations: 20_000,
            batch_size: 200,
            mode: Mode::EbmBb,
            energy_steps: 1,
            generator_steps: 1,
            gp_weight: 0.1,
            log_every: 1,
            checkpoint_every: 1000,
        }
    }
}

/// Full description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub generator: ArchSpec,
    pub energy: ArchSpec,
    pub optimizer: AdamConfig,
    pub spectral: LobpcgConfig,
    pub bound: UpperBoundConfig,
    pub train: Schedule,
    /// Master seed; every random draw of the run derives from it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetSpec::default(),
            generator: ArchSpec::generator(&[2, 100, 100, 2], Activation::Prelu, Activation::Identity),
            energy: ArchSpec::energy(2, &[100, 100], Activation::Prelu),
            optimizer: AdamConfig::default(),
            spectral: LobpcgConfig::default(),
            bound: UpperBoundConfig::default(),
            train: Schedule::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 25-Gaussians with the toy networks.
    pub fn toy25() -> Self {
        TrainConfig {
            dataset: DatasetSpec::gaussians25(),
            ..TrainConfig::default()
        }
    }

    /// Unit Gaussian data, a single linear generator layer and a quadratic
    /// energy: the family contains the exact solution.
    pub fn gaussian_sanity() -> Self {
        TrainConfig {
            dataset: DatasetSpec::gaussian_unit(2),
            generator: ArchSpec::generator(&[2, 2], Activation::Identity, Activation::Identity),
            energy: ArchSpec::energy(2, &[4], Activation::Square),
            ..TrainConfig::default()
        }
    }

    /// Synthetic mode-counting set; the latent space has the data dimension.
    pub fn synthetic_modes(modes: usize, dim: usize) -> Self {
        TrainConfig {
            dataset: DatasetSpec::synthetic_modes(modes, dim),
            generator: ArchSpec::generator(&[dim, 100, 100, dim], Activation::Prelu, Activation::Identity),
            energy: ArchSpec::energy(dim, &[100, 100], Activation::Prelu),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let dim = self.dataset.dim()?;
        let net = |field: &str, arch: &ArchSpec, kind: NetKind| -> Result<()> {
            arch.validate().map_err(|e| match e {
                Error::Config { field: f, reason } => Error::config(format!("{field}.{f}"), reason),
                other => other,
            })?;
            if arch.kind != kind {
                return Err(Error::config(format!("{field}.kind"), format!("expected {kind:?}")));
            }
            Ok(())
        };
        net("generator", &self.generator, NetKind::Generator)?;
        net("energy", &self.energy, NetKind::Energy)?;
        if self.generator.output_dim() != dim {
            return Err(Error::config(
                "generator.widths",
                format!("output width {} differs from data dimension {dim}", self.generator.output_dim()),
            ));
        }
        if self.energy.input_dim() != dim {
            return Err(Error::config(
                "energy.widths",
                format!("input width {} differs from data dimension {dim}", self.energy.input_dim()),
            ));
        }
        self.optimizer.validate("optimizer")?;
        self.spectral.validate("spectral")?;
        self.bound.validate("bound")?;
        let t = &self.train;
        let at_least_one = |field: &str, v: u64| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(format!("train.{field}"), "must be at least 1"))
            }
        };
        at_least_one("iterations", t.iterations)?;
        at_least_one("batch_size", t.batch_size as u64)?;
        at_least_one("energy_steps", t.energy_steps as u64)?;
        at_least_one("generator_steps", t.generator_steps as u64)?;
        at_least_one("log_every", t.log_every)?;
        at_least_one("checkpoint_every", t.checkpoint_every)?;
        if !(t.gp_weight >= 0.0 && t.gp_weight.is_finite()) {
            return Err(Error::config("train.gp_weight", "must be non-negative"));
        }
        if self.dataset.kind == Some(DatasetKind::Gaussians25) && self.generator.output_dim() != 2 {
            return Err(Error::config("generator.widths", "gaussians25 is 2-dimensional"));
        }
        Ok(())
    }

    /// Parses JSON, reporting the dotted path of a field that fails to
    /// deserialize.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".into() } else { path }, e.inner().to_string())
        })
    }
}
