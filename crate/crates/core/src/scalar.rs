//! Floating-point abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used throughout the estimators: `f32` or `f64`.
pub trait Scalar:
    Float
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
    /// Converts an `f64` literal. Panics only if the target type cannot hold it at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn expit<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn logit<F: Scalar>(p: F) -> F {
    (p / (F::one() - p)).ln()
}

/// Clamps a probability into `[1e-12, 1 - 1e-12]`, widened to machine epsilon
/// for low-precision types so both logs stay finite.
#[inline]
pub fn clamp_prob<F: Scalar>(p: F) -> F {
    let lo = F::lit(1e-12);
    let hi = F::one() - F::lit(1e-12).max(F::epsilon());
    p.max(lo).min(hi)
}

/// Pairwise summation; deterministic for a fixed input order.
pub fn pairwise_sum<F: Scalar>(xs: &[F]) -> F {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().fold(F::zero(), |acc, &x| acc + x)
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean<F: Scalar>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::nan();
    }
    pairwise_sum(xs) / F::from_count(xs.len())
}

/// True when `xs[t + 1] <= xs[t] + tol` for every `t`.
pub fn is_non_increasing<F: Scalar>(xs: &[F], tol: F) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + tol)
}
