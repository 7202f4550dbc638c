//! Multilayer perceptrons for the generator and the energy, their
//! initialization, checkpoints, and the Adam optimizer.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mapping, Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Generator,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Prelu,
    LeakyRelu,
    Relu,
    Tanh,
    /// `u²`; with one hidden layer gives quadratic energies.
    Square,
}

fn default_leaky_slope() -> f64 {
    0.2
}

fn default_prelu_init() -> f64 {
    0.25
}

/// Layer widths and activations. `widths` runs from input to output, so a
/// net with `widths = [2, 100, 100, 2]` has three affine layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: NetKind,
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    #[serde(default = "ArchSpec::identity")]
    pub output_activation: Activation,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_prelu_init")]
    pub prelu_init: f64,
}

impl ArchSpec {
    fn identity() -> Activation {
        Activation::Identity
    }

    /// Generator `d → hidden… → D`.
    pub fn generator(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        ArchSpec {
            kind: NetKind::Generator,
            widths: widths.to_vec(),
            hidden_activation: hidden,
            output_activation: output,
            leaky_slope: default_leaky_slope(),
            prelu_init: default_prelu_init(),
        }
    }

    /// Energy `D → hidden… → 1` with identity output.
    pub fn energy(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        ArchSpec {
            kind: NetKind::Energy,
            widths,
            hidden_activation: activation,
            output_activation: Activation::Identity,
            leaky_slope: default_leaky_slope(),
            prelu_init: default_prelu_init(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config("arch.widths", "need at least input and output widths"));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("arch.widths[{i}]"), "width must be positive"));
        }
        match self.kind {
            NetKind::Generator => {
                let d = self.input_dim();
                let hidden = &self.widths[1..self.widths.len() - 1];
                if let Some((i, &w)) = hidden.iter().enumerate().find(|(_, &w)| w < d) {
                    return Err(Error::config(
                        format!("arch.widths[{}]", i + 1),
                        format!("hidden width {w} is narrower than the latent dimension {d}"),
                    ));
                }
            }
            NetKind::Energy => {
                if self.output_dim() != 1 {
                    return Err(Error::config(
                        "arch.widths",
                        format!("energy output width must be 1, found {}", self.output_dim()),
                    ));
                }
            }
        }
        if !self.leaky_slope.is_finite() || !self.prelu_init.is_finite() {
            return Err(Error::config("arch.leaky_slope", "must be finite"));
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Number of weights and biases, excluding activation slopes.
    pub fn num_affine_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// All trainable scalars, including one slope per PReLU layer.
    pub fn num_params(&self) -> usize {
        let slopes = (0..self.num_layers())
            .filter(|&l| self.activation(l) == Activation::Prelu)
            .count();
        self.num_affine_params() + slopes
    }
}

#[derive(Debug, Clone)]
struct Layer<T: Real> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    slope: Option<Tensor<T>>,
}

/// A fully connected network acting row-wise on `[n, in]` batches.
#[derive(Debug, Clone)]
pub struct Mlp<T: Real> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
}

fn apply_activation<T: Real>(
    act: Activation,
    u: &Tensor<T>,
    slope: Option<&Tensor<T>>,
    leaky: f64,
) -> Result<Tensor<T>> {
    match act {
        Activation::Identity => Ok(u.clone()),
        Activation::Prelu => u.prelu(slope.expect("prelu layer carries a slope")),
        Activation::LeakyRelu => u.leaky_relu(T::lit(leaky)),
        Activation::Relu => u.relu(),
        Activation::Tanh => u.tanh(),
        Activation::Square => u.square(),
    }
}

fn forward_with<T: Real>(arch: &ArchSpec, params: &[Tensor<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.cols() != arch.input_dim() {
        return Err(Error::shape("mlp forward", &[x.rows(), arch.input_dim()], x.shape()));
    }
    let mut h = x.clone();
    let mut it = params.iter();
    for l in 0..arch.num_layers() {
        let w = it.next().expect("weight");
        let b = it.next().expect("bias");
        let act = arch.activation(l);
        let slope = (act == Activation::Prelu).then(|| it.next().expect("slope"));
        h = apply_activation(act, &h.affine(w, b)?, slope, arch.leaky_slope)?;
    }
    Ok(h)
}

impl<T: Real> Mlp<T> {
    /// Builds a network with fan-in scaled uniform initialization.
    ///
    /// Weights are drawn from `U(±√(6 / ((1 + a²)·fan_in)))` where `a` is the
    /// negative-side slope of the layer's activation (`a = 1` for tanh and
    /// identity layers); biases from `U(±1/√fan_in)`.
    pub fn build(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.num_layers());
        for l in 0..arch.num_layers() {
            let (fan_in, fan_out) = (arch.widths[l], arch.widths[l + 1]);
            let act = arch.activation(l);
            let a = match act {
                Activation::Prelu => arch.prelu_init,
                Activation::LeakyRelu => arch.leaky_slope,
                Activation::Relu => 0.0,
                Activation::Identity | Activation::Tanh | Activation::Square => 1.0,
            };
            let wb = (6.0 / ((1.0 + a * a) * fan_in as f64)).sqrt();
            let bb = 1.0 / (fan_in as f64).sqrt();
            let weight = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-wb..wb)))
                .collect();
            let bias = (0..fan_out).map(|_| T::lit(rng.random_range(-bb..bb))).collect();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_out, fan_in], weight)?,
                bias: Tensor::new(vec![fan_out], bias)?,
                slope: (act == Activation::Prelu).then(|| Tensor::vector(vec![T::lit(arch.prelu_init)])),
            });
        }
        Ok(Mlp {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn kind(&self) -> NetKind {
        self.arch.kind
    }

    /// Parameters in a fixed order: per layer weight, bias, then slope.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
            if let Some(s) = &layer.slope {
                out.push(s);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(s) = &mut layer.slope {
                out.push(s);
            }
        }
        out
    }

    /// Checkpoint names matching [`Mlp::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.weight"));
            out.push(format!("layer{i}.bias"));
            if layer.slope.is_some() {
                out.push(format!("layer{i}.prelu"));
            }
        }
        out
    }

    /// All parameter values, flattened in [`Mlp::params`] order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Forward pass with the parameters held constant.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let params: Vec<Tensor<T>> = self.params().into_iter().cloned().collect();
        forward_with(&self.arch, &params, x)
    }

    /// Energies of a batch as a `[n]` vector.
    pub fn energies(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward(x)?;
        out.reshape(&[out.rows()])
    }

    /// Registers the parameters on `tape` so the forward pass can be
    /// differentiated with respect to them.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<'_, T> {
        Bound {
            arch: &self.arch,
            params: self.params().into_iter().map(|p| tape.variable(p)).collect(),
        }
    }

    pub(crate) fn from_parts(arch: ArchSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let mut it = params.into_iter();
        let mut layers = Vec::with_capacity(arch.num_layers());
        for l in 0..arch.num_layers() {
            let weight = it.next().ok_or_else(|| Error::config("params", "missing weight"))?;
            let bias = it.next().ok_or_else(|| Error::config("params", "missing bias"))?;
            let slope = if arch.activation(l) == Activation::Prelu {
                Some(it.next().ok_or_else(|| Error::config("params", "missing slope"))?)
            } else {
                None
            };
            layers.push(Layer { weight, bias, slope });
        }
        Ok(Mlp { arch, layers })
    }
}

/// Parameters of an [`Mlp`] registered on a tape.
pub struct Bound<'a, T: Real> {
    arch: &'a ArchSpec,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Bound<'_, T> {
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.params.iter().collect()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        forward_with(self.arch, &self.params, x)
    }

    pub fn energies(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward(x)?;
        out.reshape(&[out.rows()])
    }
}

impl<T: Real> Mapping<T> for Mlp<T> {
    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(z)
    }
}

impl<T: Real> Mapping<T> for Bound<'_, T> {
    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(z)
    }
    fn tape(&self) -> Option<Tape<T>> {
        self.params.first().and_then(|p| p.tape().cloned())
    }
}
