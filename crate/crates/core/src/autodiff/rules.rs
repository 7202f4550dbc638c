//! Derivative rules, written with the same tensor operations they
//! differentiate so that rules applied to attached tensors are themselves
//! recorded (higher-order differentiation).

use super::ops::{negative_mask, positive_mask};
use super::tape::Op;
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Real;

type Grads<T> = Vec<Option<Tensor<T>>>;

fn sum_opt<T: Real>(a: Option<Tensor<T>>, b: Option<Tensor<T>>) -> Result<Option<Tensor<T>>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.add(&b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

/// Local derivative of PReLU with respect to its pre-activation, kept
/// differentiable in the slope.
fn prelu_slope<T: Real>(u: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let neg = negative_mask(u);
    positive_mask(u).add(&neg.mul(&a.expand(u.shape())?)?)
}

fn leaky_slope<T: Real>(u: &Tensor<T>, s: T) -> Tensor<T> {
    u.map_values(|x| if x >= T::zero() { T::one() } else { s })
}

/// Reverse-mode rule: cotangents for each input given the output cotangent
/// `g`. Inputs with `needs[i] == false` may be skipped.
pub(crate) fn vjp<T: Real>(
    op: &Op<T>,
    x: &[Tensor<T>],
    y: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Result<Grads<T>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    Ok(match op {
        Op::Leaf | Op::Const => vec![],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), want(1).then(|| g.neg()).transpose()?],
        Op::Mul => vec![
            want(0).then(|| g.mul(&x[1])).transpose()?,
            want(1).then(|| g.mul(&x[0])).transpose()?,
        ],
        Op::Div => vec![
            want(0).then(|| g.div(&x[1])).transpose()?,
            want(1)
                .then(|| g.mul(y)?.div(&x[1])?.neg())
                .transpose()?,
        ],
        Op::Neg => vec![Some(g.neg()?)],
        Op::Scale(c) => vec![Some(g.scale(*c)?)],
        Op::Shift(_) => vec![Some(g.clone())],
        Op::Square => vec![Some(g.mul(&x[0])?.scale(T::lit(2.0))?)],
        Op::Sqrt => vec![Some(g.div(&y.scale(T::lit(2.0))?)?)],
        Op::Log => vec![Some(g.div(&x[0])?)],
        Op::Exp => vec![Some(g.mul(y)?)],
        Op::Tanh => vec![Some(g.mul(&y.square()?.neg()?.shift(T::one())?)?)],
        Op::Prelu => {
            let (u, a) = (&x[0], &x[1]);
            let du = want(0)
                .then(|| g.mul(&prelu_slope(u, a)?))
                .transpose()?;
            let da = want(1)
                .then(|| {
                    g.mul(u)?
                        .mul(&negative_mask(u))?
                        .sum()?
                        .reshape(a.shape())
                })
                .transpose()?;
            vec![du, da]
        }
        Op::LeakyRelu(s) => vec![Some(g.mul(&leaky_slope(&x[0], *s))?)],
        Op::MatMul { trans_a, trans_b } => {
            let (a, b) = (&x[0], &x[1]);
            let (ta, tb) = (*trans_a, *trans_b);
            let da = want(0)
                .then(|| {
                    if ta {
                        b.matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(b, false, !tb)
                    }
                })
                .transpose()?;
            let db = want(1)
                .then(|| {
                    if tb {
                        g.matmul_t(a, true, ta)
                    } else {
                        a.matmul_t(g, !ta, false)
                    }
                })
                .transpose()?;
            vec![da, db]
        }
        Op::AddRow => vec![
            Some(g.clone()),
            want(1).then(|| g.sum_rows()).transpose()?,
        ],
        Op::SumAll => vec![Some(g.expand(x[0].shape())?)],
        Op::SumRows => vec![Some(g.broadcast_rows(x[0].shape()[0])?)],
        Op::SumCols => vec![Some(g.broadcast_cols(x[0].shape()[1])?)],
        Op::BroadcastRows(_) => vec![Some(g.sum_rows()?)],
        Op::BroadcastCols(_) => vec![Some(g.sum_cols()?)],
        Op::Expand => vec![Some(g.sum()?.reshape(x[0].shape())?)],
        Op::Reshape => vec![Some(g.reshape(x[0].shape())?)],
        Op::Slice { axis, start } => {
            vec![Some(g.pad(*axis, *start, x[0].shape()[*axis])?)]
        }
        Op::Pad { axis, start } => {
            let len = x[0].shape()[*axis];
            vec![Some(g.slice(*axis, *start, start + len)?)]
        }
        Op::Concat { axis } => {
            let mut offset = 0;
            let mut out = Vec::with_capacity(x.len());
            for (i, part) in x.iter().enumerate() {
                let len = part.shape()[*axis];
                out.push(
                    want(i)
                        .then(|| g.slice(*axis, offset, offset + len))
                        .transpose()?,
                );
                offset += len;
            }
            out
        }
    })
}

/// Forward-mode rule: tangent of the output given input tangents (`None`
/// means a zero tangent).
pub(crate) fn jvp<T: Real>(
    op: &Op<T>,
    x: &[Tensor<T>],
    y: &Tensor<T>,
    dx: &[Option<Tensor<T>>],
) -> Result<Option<Tensor<T>>> {
    let d = |i: usize| dx.get(i).and_then(Option::as_ref);
    Ok(match op {
        Op::Leaf | Op::Const => None,
        Op::Add => sum_opt(d(0).cloned(), d(1).cloned())?,
        Op::Sub => sum_opt(d(0).cloned(), d(1).map(Tensor::neg).transpose()?)?,
        Op::Mul => sum_opt(
            d(0).map(|t| t.mul(&x[1])).transpose()?,
            d(1).map(|t| x[0].mul(t)).transpose()?,
        )?,
        Op::Div => {
            let num = sum_opt(d(0).cloned(), d(1).map(|t| y.mul(t)?.neg()).transpose()?)?;
            num.map(|n| n.div(&x[1])).transpose()?
        }
        Op::Neg => d(0).map(Tensor::neg).transpose()?,
        Op::Scale(c) => d(0).map(|t| t.scale(*c)).transpose()?,
        Op::Shift(_) => d(0).cloned(),
        Op::Square => d(0)
            .map(|t| t.mul(&x[0])?.scale(T::lit(2.0)))
            .transpose()?,
        Op::Sqrt => d(0)
            .map(|t| t.div(&y.scale(T::lit(2.0))?))
            .transpose()?,
        Op::Log => d(0).map(|t| t.div(&x[0])).transpose()?,
        Op::Exp => d(0).map(|t| t.mul(y)).transpose()?,
        Op::Tanh => d(0)
            .map(|t| t.mul(&y.square()?.neg()?.shift(T::one())?))
            .transpose()?,
        Op::Prelu => {
            let (u, a) = (&x[0], &x[1]);
            sum_opt(
                d(0).map(|t| t.mul(&prelu_slope(u, a)?)).transpose()?,
                d(1)
                    .map(|t| u.mul(&negative_mask(u))?.mul(&t.expand(u.shape())?))
                    .transpose()?,
            )?
        }
        Op::LeakyRelu(s) => d(0)
            .map(|t| t.mul(&leaky_slope(&x[0], *s)))
            .transpose()?,
        Op::MatMul { trans_a, trans_b } => sum_opt(
            d(0).map(|t| t.matmul_t(&x[1], *trans_a, *trans_b)).transpose()?,
            d(1).map(|t| x[0].matmul_t(t, *trans_a, *trans_b)).transpose()?,
        )?,
        Op::AddRow => {
            let rows = x[0].shape()[0];
            sum_opt(
                d(0).cloned(),
                d(1).map(|t| t.broadcast_rows(rows)).transpose()?,
            )?
        }
        Op::SumAll => d(0).map(Tensor::sum).transpose()?,
        Op::SumRows => d(0).map(Tensor::sum_rows).transpose()?,
        Op::SumCols => d(0).map(Tensor::sum_cols).transpose()?,
        Op::BroadcastRows(m) => d(0).map(|t| t.broadcast_rows(*m)).transpose()?,
        Op::BroadcastCols(n) => d(0).map(|t| t.broadcast_cols(*n)).transpose()?,
        Op::Expand => d(0).map(|t| t.expand(y.shape())).transpose()?,
        Op::Reshape => d(0).map(|t| t.reshape(y.shape())).transpose()?,
        Op::Slice { axis, start } => {
            let end = start + y.shape()[*axis];
            d(0).map(|t| t.slice(*axis, *start, end)).transpose()?
        }
        Op::Pad { axis, start } => {
            let total = y.shape()[*axis];
            d(0).map(|t| t.pad(*axis, *start, total)).transpose()?
        }
        Op::Concat { axis } => {
            let parts: Vec<Tensor<T>> = x
                .iter()
                .enumerate()
                .map(|(i, xi)| d(i).cloned().unwrap_or_else(|| Tensor::zeros(xi.shape())))
                .collect();
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            Some(Tensor::concat(&refs, *axis)?)
        }
    })
}
