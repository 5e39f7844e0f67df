//! Scalar abstraction: every kernel is generic over the element type.
//!
//! The codec itself runs on `f32` (optionally re-rounded to emulated FP16 or
//! BF16 after each op), while gradient verification runs the same graphs on
//! `f64` so that differentiation errors are separable from discretization
//! error.

use crate::precision::PrecisionMode;

/// Floating-point element type usable by the tensor kernels: f32 or f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Round to the nearest value representable in `mode` (ties to even).
    ///
    /// `PrecisionMode::Fp32` keeps the native precision of the scalar type:
    /// it is the identity for both `f32` and the 64-bit verification mode.
    fn round_to(self, mode: PrecisionMode) -> Self {
        match mode {
            PrecisionMode::Fp32 => self,
            PrecisionMode::Fp16Emu => {
                Self::of_f64(crate::precision::round_f64_to_fp16(self.as_f64()))
            }
            PrecisionMode::Bf16Emu => {
                Self::of_f64(crate::precision::round_f64_to_bf16(self.as_f64()))
            }
        }
    }
}

impl Scalar for f32 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
