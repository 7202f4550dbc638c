pub mod autodiff;
pub mod bounds;
pub mod data;
pub mod error;
pub mod eval;
mod fsutil;
pub mod nets;
pub mod scalar;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor = autodiff::Tensor<f64>;
pub type Mlp = nets::Mlp<f64>;
pub type SpectralEstimate = spectral::SpectralEstimate<f64>;
pub type Linearization = autodiff::Linearization<f64>;

pub use bounds::BoundReport;
pub use eval::ModeReport;
pub use trainer::{TrainConfig, Trainer};
