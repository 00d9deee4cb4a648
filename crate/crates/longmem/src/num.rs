//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the math core is generic over.
///
/// Blanket-implemented for anything satisfying the bounds, in practice
/// `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` constants; panics only for
    /// values outside the type's range, which the crate never produces.
    fn from_f64_const(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + ScalarOperand
        + Sum<T>
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Pairwise (cascade) summation. Keeps accumulation error at
/// O(log n · eps) instead of O(n · eps), which matters for the
/// 10^5-voxel reductions in the pipeline.
pub fn pairwise_sum<F: Real>(xs: &[F]) -> F {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut acc = F::zero();
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise summation of a mapped slice, avoiding an intermediate buffer
/// allocation at the leaves.
pub fn pairwise_sum_by<T, F: Real>(xs: &[T], f: impl Fn(&T) -> F + Copy) -> F {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut acc = F::zero();
        for x in xs {
            acc += f(x);
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
    }
}
