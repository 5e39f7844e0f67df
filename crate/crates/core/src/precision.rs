//! Emulated reduced-precision floats.
//!
//! Values are stored as ordinary floats; "running in FP16/BF16" means every
//! op output is re-rounded (round-to-nearest-even) so that each element is
//! exactly representable in the emulated format. Accumulation inside a kernel
//! stays in the native precision, mirroring how tensor cores accumulate at
//! higher precision than their storage format.

/// Numeric format an activation tensor is held in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecisionMode {
    /// Native precision of the scalar type; no re-rounding.
    Fp32,
    /// IEEE binary16: 5 exponent bits, 10 mantissa bits, max finite 65504.
    Fp16Emu,
    /// bfloat16: 8 exponent bits (same width as FP32), 7 mantissa bits.
    Bf16Emu,
}

impl PrecisionMode {
    pub fn name(self) -> &'static str {
        match self {
            PrecisionMode::Fp32 => "fp32",
            PrecisionMode::Fp16Emu => "fp16",
            PrecisionMode::Bf16Emu => "bf16",
        }
    }
}

/// Round a finite or infinite f64 to a binary minifloat with the given
/// exponent/mantissa widths, round-to-nearest-even, overflow to infinity.
///
/// Works on f64 bits so a single rounding step serves both the f32 and f64
/// instantiations of the kernels (f32 -> f64 is exact).
fn round_to_minifloat(x: f64, exp_bits: u32, mant_bits: u32) -> f64 {
    if x.is_nan() || x.is_infinite() || x == 0.0 {
        return x;
    }
    let emax: i32 = (1i32 << (exp_bits - 1)) - 1;
    let emin: i32 = 1 - emax;
    let max_finite = (2.0 - (0.5f64).powi(mant_bits as i32)) * 2f64.powi(emax);

    let a = x.abs();
    // Unbiased exponent of |x|; f64 subnormals (exponent field 0) only occur
    // for magnitudes far below any target's subnormal range, so the biased
    // value of -1023 still routes them into the subnormal branch below.
    let e = ((a.to_bits() >> 52) & 0x7FF) as i32 - 1023;

    let quantum_exp = if e < emin { emin - mant_bits as i32 } else { e - mant_bits as i32 };
    let quantum = 2f64.powi(quantum_exp);
    // Exact: dividing by a power of two; the quotient is far from f64 limits.
    let rounded = (a / quantum).round_ties_even() * quantum;

    let result = if rounded > max_finite { f64::INFINITY } else { rounded };
    if x < 0.0 {
        -result
    } else {
        result
    }
}

/// Round to IEEE binary16 (FP16). Values past 65504 overflow to infinity.
pub fn round_f64_to_fp16(x: f64) -> f64 {
    round_to_minifloat(x, 5, 10)
}

/// Round to bfloat16. Shares the FP32 exponent range, so any finite f32
/// below the largest finite BF16 stays finite.
pub fn round_f64_to_bf16(x: f64) -> f64 {
    round_to_minifloat(x, 8, 7)
}

/// Nearest value representable in `mode`, as a standalone scalar op.
pub fn round_to_precision(x: f32, mode: PrecisionMode) -> f32 {
    use crate::scalar::Scalar;
    x.round_to(mode)
}
