//! Standard-normal CDF/PDF built on deterministic `exp`/`erf` evaluations.
//!
//! The entropy coder quantizes Gaussian CDF values into fixed-point tables
//! that must be byte-identical wherever a stream is decoded. `f64::exp` may
//! route to a platform libm, so the functions here use only IEEE arithmetic
//! (+, -, *, /) plus exactly-rounded `powi`-style scaling, making every table
//! reproducible bit-for-bit.

/// Deterministic exp(x): range reduction by powers of two plus a fixed-degree
/// Taylor evaluation in Horner form.
pub fn exp_det(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 709.0 {
        return f64::INFINITY;
    }
    if x < -745.0 {
        return 0.0;
    }
    const LN2: f64 = std::f64::consts::LN_2;
    // x = k*ln2 + r with |r| <= ln2/2
    let k = (x / LN2).round_ties_even();
    let r = x - k * LN2;
    // Taylor sum of exp(r) for |r| <= 0.347: degree 13 gives < 1e-17 rel error.
    let mut sum = 1.0;
    let mut term = 1.0;
    for i in 1..=13 {
        term *= r / i as f64;
        sum += term;
    }
    sum * pow2i(k as i32)
}

#[inline]
fn pow2i(k: i32) -> f64 {
    // Exact power of two via the exponent field (|k| < 1023 in practice here).
    if k >= 1024 {
        f64::INFINITY
    } else if k <= -1075 {
        0.0
    } else if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        // Subnormal results: build 2^-1022 * 2^(k+1022)
        f64::from_bits(1u64 << (52 + 1022 + k).max(0))
    }
}

/// Deterministic error function, |error| < 1.2e-16 over the real line.
///
/// Uses the Chebyshev-fitted rational approximation from W. J. Cody's erfc
/// routine; all coefficients evaluate with plain arithmetic and `exp_det`.
pub fn erf_det(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < 0.5 {
        // erf(x) = x * P(x^2)/Q(x^2)
        const P: [f64; 5] = [
            3.209377589138469472562e3,
            3.774852376853020208137e2,
            1.138641541510501556495e2,
            3.161123743870565596947e0,
            1.857777061846031526730e-1,
        ];
        const Q: [f64; 4] = [
            2.844236833439170622273e3,
            1.282616526077372275645e3,
            2.440246379344441733056e2,
            2.360129095234412093499e1,
        ];
        let z = ax * ax;
        let num = ((((P[4] * z + P[3]) * z + P[2]) * z + P[1]) * z) + P[0];
        let den = ((((z + Q[3]) * z + Q[2]) * z + Q[1]) * z) + Q[0];
        ax * num / den
    } else {
        1.0 - erfc_pos(ax)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// erfc on [0.5, inf).
fn erfc_pos(x: f64) -> f64 {
    if x > 27.0 {
        return 0.0; // below the smallest positive normal after squaring
    }
    if x <= 4.0 {
        const P: [f64; 9] = [
            1.23033935479799725272e3,
            2.05107837782607146532e3,
            1.71204761263407058314e3,
            8.81952221241769090411e2,
            2.98635138197400131132e2,
            6.61191906371416294775e1,
            8.88314979438837594118e0,
            5.64188496988670089180e-1,
            2.15311535474403846343e-8,
        ];
        const Q: [f64; 9] = [
            1.23033935480374942043e3,
            3.43936767414372163696e3,
            4.36261909014324715820e3,
            3.29079923573345962678e3,
            1.62138957456669018874e3,
            5.37181101862009857509e2,
            1.17693950891312499305e2,
            1.57449261107098347253e1,
            1.0,
        ];
        let mut num = P[8] * x;
        let mut den = Q[8] * x;
        for i in (1..8).rev() {
            num = (num + P[i]) * x;
            den = (den + Q[i]) * x;
        }
        (num + P[0]) / (den + Q[0]) * exp_det(-x * x)
    } else {
        // Coefficients highest-degree first.
        const R: [f64; 6] = [
            1.63153871373020978498e-2,
            3.05326634961232344035e-1,
            3.60344899949804439429e-1,
            1.25781726111229246204e-1,
            1.60837851487422766278e-2,
            6.58749161529837803157e-4,
        ];
        const S: [f64; 6] = [
            1.0,
            2.56852019228982242072e0,
            1.87295284992346047209e0,
            5.27905102951428412248e-1,
            6.05183413124413191178e-2,
            2.33520497626869185443e-3,
        ];
        let z = 1.0 / (x * x);
        let mut num = R[0];
        let mut den = S[0];
        for i in 1..6 {
            num = num * z + R[i];
            den = den * z + S[i];
        }
        let poly = z * num / den;
        const INV_SQRT_PI: f64 = 0.564189583547756286948; // 1/sqrt(pi)
        exp_det(-x * x) / x * (INV_SQRT_PI - poly)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    0.5 * (1.0 + erf_det(x * INV_SQRT_2))
}

/// Standard normal PDF.
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398942280401432677939946; // 1/sqrt(2*pi)
    INV_SQRT_2PI * exp_det(-0.5 * x * x)
}
