//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All solvers are written against [`Real`] so that the same code runs in
//! `f32` (fast smoke runs) and `f64` (the default used by the CLI and the
//! acceptance suite).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Draws one standard normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Converts an `f64` literal. Panics only for non-representable input,
    /// which cannot happen for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Shorthand for [`Real::lit`].
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::lit(v)
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Row vector times a row-major `d x d` matrix: `r M`.
pub(crate) fn row_mat<T: Real>(r: &[T], m: &[T]) -> Vec<T> {
    let d = r.len();
    (0..d).map(|j| (0..d).map(|i| r[i] * m[i * d + j]).sum()).collect()
}

/// `M Mᵀ` for a row-major square matrix.
pub(crate) fn gram<T: Real>(m: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = dot(&m[i * d..(i + 1) * d], &m[j * d..(j + 1) * d]);
        }
    }
    out
}
