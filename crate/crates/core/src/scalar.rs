//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Everything that touches matrices is generic over [`Real`], which is
//! implemented for `f32` and `f64`. The `f64` instantiation is the one the
//! crate-root aliases use; `f32` is available where memory matters more than
//! the last few digits, with correspondingly looser invariant tolerances.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the mapping, verification and synthesis code.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Per-entry tolerance for `MᵀM = I` and `det(M) = 1` on rotation maps.
    const ORTHO_TOL: f64;
    /// Allowed deviation of a normalized vector's L2 norm from one.
    const UNIT_TOL: f64;

    fn of_f32(v: f32) -> Self;
    fn to_f32_lossy(self) -> f32;

    /// Lossy conversion from `f64`; used for literals and for values read from disk.
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const ORTHO_TOL: f64 = 1e-8;
    const UNIT_TOL: f64 = 1e-6;

    #[inline]
    fn of_f32(v: f32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const ORTHO_TOL: f64 = 1e-4;
    const UNIT_TOL: f64 = 1e-5;

    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length in place and returns the original norm.
/// Vectors with norm below `floor` are left untouched.
pub fn normalize_in_place<T: Real>(v: &mut [T], floor: T) -> T {
    let n = norm(v);
    if n >= floor {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}
