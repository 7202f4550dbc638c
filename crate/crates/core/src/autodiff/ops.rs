//! Forward operations. Each records a tape node when any input is attached.

use super::tape::{record, Op};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, &a.shape, &b.shape));
    }
    Ok(())
}

fn require_rank<T: Real>(op: &'static str, a: &Tensor<T>, rank: usize) -> Result<()> {
    if a.rank() != rank {
        return Err(Error::domain(
            op,
            format!("expected rank {rank}, found shape {:?}", a.shape),
        ));
    }
    Ok(())
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn map<T: Real>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Vec<T> {
    a.data.iter().map(|&x| f(x)).collect()
}

/// `(outer, len, inner)` split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// Mask of `x >= 0`, the positive-side convention at the kink.
pub(crate) fn positive_mask<T: Real>(u: &Tensor<T>) -> Tensor<T> {
    u.map_values(|x| if x >= T::zero() { T::one() } else { T::zero() })
}

pub(crate) fn negative_mask<T: Real>(u: &Tensor<T>) -> Tensor<T> {
    u.map_values(|x| if x >= T::zero() { T::zero() } else { T::one() })
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        record(Op::Add, &[self, other], self.shape.clone(), zip(self, other, |x, y| x + y))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        record(Op::Sub, &[self, other], self.shape.clone(), zip(self, other, |x, y| x - y))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        record(Op::Mul, &[self, other], self.shape.clone(), zip(self, other, |x, y| x * y))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, other)?;
        let out = zip(self, other, |x, y| x / y);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Overflow {
                op: "div",
                detail: "division by zero or overflow".into(),
            });
        }
        record(Op::Div, &[self, other], self.shape.clone(), out)
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        record(Op::Neg, &[self], self.shape.clone(), map(self, |x| -x))
    }

    /// Multiplies by a constant.
    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        record(Op::Scale(c), &[self], self.shape.clone(), map(self, |x| x * c))
    }

    /// Adds a constant.
    pub fn shift(&self, c: T) -> Result<Tensor<T>> {
        record(Op::Shift(c), &[self], self.shape.clone(), map(self, |x| x + c))
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        record(Op::Square, &[self], self.shape.clone(), map(self, |x| x * x))
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        if let Some(bad) = self.data.iter().find(|x| **x < T::zero()) {
            return Err(Error::domain("sqrt", format!("negative input {bad}")));
        }
        record(Op::Sqrt, &[self], self.shape.clone(), map(self, T::sqrt))
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some(bad) = self.data.iter().find(|x| **x <= T::zero()) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        record(Op::Log, &[self], self.shape.clone(), map(self, T::ln))
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        let out = map(self, T::exp);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Overflow {
                op: "exp",
                detail: "result exceeds the floating-point range".into(),
            });
        }
        record(Op::Exp, &[self], self.shape.clone(), out)
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        record(Op::Tanh, &[self], self.shape.clone(), map(self, T::tanh))
    }

    /// Parametric ReLU with a single learnable slope of shape `[1]`.
    pub fn prelu(&self, slope: &Tensor<T>) -> Result<Tensor<T>> {
        if slope.numel() != 1 {
            return Err(Error::shape("prelu", &self.shape, &slope.shape));
        }
        let a = slope.data[0];
        let out = map(self, |x| if x >= T::zero() { x } else { a * x });
        record(Op::Prelu, &[self, slope], self.shape.clone(), out)
    }

    pub fn leaky_relu(&self, slope: T) -> Result<Tensor<T>> {
        let out = map(self, |x| if x >= T::zero() { x } else { slope * x });
        record(Op::LeakyRelu(slope), &[self], self.shape.clone(), out)
    }

    /// `max(0, x)`.
    pub fn relu(&self) -> Result<Tensor<T>> {
        self.leaky_relu(T::zero())
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` optionally transposes a 2-d operand.
    pub fn matmul_t(&self, other: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k) = if trans_a {
            (self.shape[1], self.shape[0])
        } else {
            (self.shape[0], self.shape[1])
        };
        let (k2, n) = if trans_b {
            (other.shape[1], other.shape[0])
        } else {
            (other.shape[0], other.shape[1])
        };
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, &self.data, trans_a, &other.data, trans_b, &mut out);
        record(Op::MatMul { trans_a, trans_b }, &[self, other], vec![m, n], out)
    }

    /// Adds a `[n]` bias to every row of a `[m, n]` tensor.
    pub fn add_row(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || bias.rank() != 1 || bias.shape[0] != self.shape[1] {
            return Err(Error::shape("add_row", &self.shape, &bias.shape));
        }
        let n = self.shape[1];
        let out = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias.data[i % n])
            .collect();
        record(Op::AddRow, &[self, bias], self.shape.clone(), out)
    }

    /// Batched affine map `x · Wᵀ + b` with `W` stored as `[out, in]`.
    pub fn affine(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(weight, false, true)?.add_row(bias)
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let s = self.data.iter().copied().sum();
        record(Op::SumAll, &[self], Vec::new(), vec![s])
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        if self.numel() == 0 {
            return Err(Error::domain("mean", "empty tensor"));
        }
        self.sum()?.scale(T::one() / T::from_usize_lossy(self.numel()))
    }

    /// `[m, n] → [n]`, summing over rows.
    pub fn sum_rows(&self) -> Result<Tensor<T>> {
        require_rank("sum_rows", self, 2)?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &x) in out.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        record(Op::SumRows, &[self], vec![n], out)
    }

    /// `[m, n] → [m]`, summing within each row.
    pub fn sum_cols(&self) -> Result<Tensor<T>> {
        require_rank("sum_cols", self, 2)?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let out = (0..m)
            .map(|i| self.data[i * n..(i + 1) * n].iter().copied().sum())
            .collect();
        record(Op::SumCols, &[self], vec![m], out)
    }

    /// `[n] → [m, n]`, repeating the vector as every row.
    pub fn broadcast_rows(&self, m: usize) -> Result<Tensor<T>> {
        require_rank("broadcast_rows", self, 1)?;
        let n = self.shape[0];
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.data);
        }
        record(Op::BroadcastRows(m), &[self], vec![m, n], out)
    }

    /// `[m] → [m, n]`, repeating each entry across its row.
    pub fn broadcast_cols(&self, n: usize) -> Result<Tensor<T>> {
        require_rank("broadcast_cols", self, 1)?;
        let out = self
            .data
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, n))
            .collect();
        record(Op::BroadcastCols(n), &[self], vec![self.shape[0], n], out)
    }

    /// Fills `shape` with the value of a one-element tensor.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.numel() != 1 {
            return Err(Error::shape("expand", &self.shape, shape));
        }
        let out = vec![self.data[0]; numel(shape)];
        record(Op::Expand, &[self], shape.to_vec(), out)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        record(Op::Reshape, &[self], shape.to_vec(), self.to_vec())
    }

    /// Sub-range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start > end || end > self.shape[axis] {
            return Err(Error::domain(
                "slice",
                format!("range {start}..{end} on axis {axis} of shape {:?}", self.shape),
            ));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&self.data[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = width;
        record(Op::Slice { axis, start }, &[self], shape, out)
    }

    /// Zero-pads along `axis` so the tensor occupies `start..start+len` of a
    /// length-`total` axis. Adjoint of [`Tensor::slice`].
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + self.shape[axis] > total {
            return Err(Error::domain(
                "pad",
                format!("offset {start} into length {total} on shape {:?}", self.shape),
            ));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut shape = self.shape.clone();
        shape[axis] = total;
        let mut out = vec![T::zero(); numel(&shape)];
        for o in 0..outer {
            let dst = o * total * inner + start * inner;
            out[dst..dst + len * inner]
                .copy_from_slice(&self.data[o * len * inner..(o + 1) * len * inner]);
        }
        record(Op::Pad { axis, start }, &[self], shape, out)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::domain("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
            total += p.shape[axis];
        }
        let (outer, _, inner) = split_axis(&first.shape, axis);
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let w = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        record(Op::Concat { axis }, parts, shape, out)
    }

    pub fn squared_norm(&self) -> Result<Tensor<T>> {
        self.square()?.sum()
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.mul(other)?.sum()
    }

    /// Row-wise inner products of two `[m, n]` tensors, giving `[m]`.
    pub fn row_dot(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.mul(other)?.sum_cols()
    }
}
