//! Scalar abstraction shared by every numerical module.
//!
//! All math in this crate is written against [`Real`], implemented for `f32`
//! and `f64`. Training and evaluation use `f64` (see the aliases at the crate
//! root); `f32` is supported for the engine itself.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable by the tensor engine.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Human-readable type name, recorded in checkpoints.
    const NAME: &'static str;

    /// `c = a · b` for row-major operands, where `a` is `m × k` (or `k × m`
    /// when `trans_a`) and `b` is `k × n` (or `n × k` when `trans_b`).
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
    );

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable")
    }
}

/// Row/column strides of a row-major `rows × cols` buffer, optionally viewed
/// transposed.
#[inline]
fn strides(cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs buffer length");
                assert_eq!(b.len(), k * n, "gemm: rhs buffer length");
                assert_eq!(c.len(), m * n, "gemm: output buffer length");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c.iter_mut().for_each(|x| *x = 0.0);
                    return;
                }
                // Stored shape of `a` is (m, k) or (k, m); same for `b`.
                let (rsa, csa) = strides(if trans_a { m } else { k }, trans_a);
                let (rsb, csb) = strides(if trans_b { k } else { n }, trans_b);
                // SAFETY: buffer lengths are checked above and the strides
                // describe views that stay inside those buffers.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);
