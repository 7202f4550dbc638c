//! Tape-based automatic differentiation over dense row-major tensors.
//!
//! Operations on attached tensors append a node to the tape they share.
//! Reverse mode ([`grad`], [`backward`]) and forward mode ([`tangent`]) both
//! walk that record; derivative rules are expressed with the same operations,
//! so with `higher_order` set the derivatives are recorded too and can be
//! differentiated again.
//!
//! ```
//! use ebm_bibound::autodiff::{grad, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.variable(&Tensor::vector(vec![2.0_f64]));
//! let y = x.square().unwrap().square().unwrap().sum().unwrap();
//! let dy = grad(&y, &[&x], true).unwrap().remove(0);
//! let d2y = grad(&dy.sum().unwrap(), &[&x], false).unwrap().remove(0);
//! assert_eq!(d2y.data(), &[48.0]);
//! ```

mod grad;
mod ops;
mod rules;
mod tape;
mod tensor;

pub use grad::{backward, grad, jvp, tangent, vjp, Linearization};
pub use tape::Tape;
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A batched map `R^d → R^D` acting row-wise on `[n, d]` inputs.
///
/// Rows must not interact, so the Jacobian of one output row depends only on
/// the matching input row.
pub trait Mapping<T: Real> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>>;

    /// Tape holding the map's own differentiable parameters, if any.
    fn tape(&self) -> Option<Tape<T>> {
        None
    }

    /// Records the map at `z` for repeated Jacobian products.
    fn linearize(&self, z: &Tensor<T>) -> Result<Linearization<T>> {
        if z.rank() != 2 || z.cols() != self.input_dim() {
            return Err(Error::shape("linearize", &[z.rows(), self.input_dim()], z.shape()));
        }
        match self.tape() {
            Some(tape) => Linearization::on(&tape, |x| self.apply(x), z),
            None => Linearization::new(|x| self.apply(x), z),
        }
    }
}

impl<T: Real, M: Mapping<T> + ?Sized> Mapping<T> for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        (**self).apply(z)
    }
    fn tape(&self) -> Option<Tape<T>> {
        (**self).tape()
    }
}

/// Constant linear map `z ↦ A z`, with `A` stored as `[D, d]`.
#[derive(Debug, Clone)]
pub struct LinearMap<T: Real> {
    matrix: Tensor<T>,
}

impl<T: Real> LinearMap<T> {
    pub fn new(matrix: Tensor<T>) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::shape("LinearMap::new", &[0, 0], matrix.shape()));
        }
        Ok(LinearMap {
            matrix: matrix.detach(),
        })
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut data = vec![T::zero(); n * n];
        for (i, &v) in diag.iter().enumerate() {
            data[i * n + i] = v;
        }
        LinearMap {
            matrix: Tensor::detached(vec![n, n], data),
        }
    }

    pub fn scaled_identity(d: usize, c: T) -> Self {
        Self::diagonal(&vec![c; d])
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }
}

impl<T: Real> Mapping<T> for LinearMap<T> {
    fn input_dim(&self) -> usize {
        self.matrix.shape()[1]
    }
    fn output_dim(&self) -> usize {
        self.matrix.shape()[0]
    }
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        z.matmul_t(&self.matrix, false, true)
    }
}

/// Adapts a closure into a [`Mapping`].
pub struct FnMapping<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnMapping<F> {
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        FnMapping {
            input_dim,
            output_dim,
            f,
        }
    }
}

impl<T, F> Mapping<T> for FnMapping<F>
where
    T: Real,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        (self.f)(z)
    }
}
