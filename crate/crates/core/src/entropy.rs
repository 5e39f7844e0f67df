//! Discretized-Gaussian probability model and byte-oriented range coder.
//!
//! Each latent position is coded under a Gaussian with its own (mean, scale).
//! Probabilities are quantized to 16-bit fixed-point CDF tables whose mass
//! sums to exactly 2^16 (tail mass folded into the extreme bins), and the
//! coder state uses only integer arithmetic, so streams are byte-identical
//! across machines. Symbols far outside the modeled window use an escape
//! token followed by the raw value at 16 bits.

use crate::error::{CodecError, Result, TensorError, TensorResult};
use crate::gauss::normal_cdf;
use crate::tensor::{Dims, Tensor};
use crate::Tensor32;

pub const SIGMA_MIN: f64 = 0.04;
pub const SIGMA_MAX: f64 = 256.0;
/// Modeled symbol range; values outside go through the escape path.
pub const SYMBOL_MAX: i32 = 255;

const TOT_BITS: u32 = 16;
const TOT: u32 = 1 << TOT_BITS;
/// Probability reserved for the escape token: 16/65536.
const ESCAPE_COUNTS: u32 = 16;
const RENORM_LIMIT: u32 = 1 << 24;

/// Per-position Gaussian parameters. Scales are clamped to
/// [`SIGMA_MIN`, `SIGMA_MAX`] on construction, so the invariant holds by
/// type: the coder never sees a degenerate pmf.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: Tensor32,
    scale: Tensor32,
}

impl GaussianParams {
    pub fn new(mean: Tensor32, scale: Tensor32) -> TensorResult<Self> {
        if mean.dims() != scale.dims() {
            return Err(TensorError::ShapeMismatch {
                context: "gaussian params",
                left: mean.dims().as_array(),
                right: scale.dims().as_array(),
            });
        }
        let scale = crate::tensor::clamp_elem(&scale, SIGMA_MIN, SIGMA_MAX);
        Ok(GaussianParams { mean, scale })
    }

    /// Zero-mean params with the given scales (the mean-removed coding case).
    pub fn zero_mean(scale: Tensor32) -> Self {
        let mean = Tensor::zeros(scale.dims());
        GaussianParams { scale: crate::tensor::clamp_elem(&scale, SIGMA_MIN, SIGMA_MAX), mean }
    }

    pub fn dims(&self) -> Dims {
        self.mean.dims()
    }
    pub fn len(&self) -> usize {
        self.mean.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
    pub fn mean(&self) -> &Tensor32 {
        &self.mean
    }
    pub fn scale(&self) -> &Tensor32 {
        &self.scale
    }
}

/// Integer symbols, one per latent position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolPlane {
    dims: Dims,
    symbols: Vec<i32>,
}

impl SymbolPlane {
    /// Symbols must fit in 16 bits so the escape path can code them raw.
    pub fn new(dims: Dims, symbols: Vec<i32>) -> TensorResult<Self> {
        if symbols.len() != dims.len() {
            return Err(TensorError::DataLength {
                shape: dims.as_array(),
                expected: dims.len(),
                got: symbols.len(),
            });
        }
        if symbols.iter().any(|&s| s < i16::MIN as i32 || s > i16::MAX as i32) {
            return Err(TensorError::InvalidArgument("symbol outside 16-bit escape range"));
        }
        Ok(SymbolPlane { dims, symbols })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn symbols(&self) -> &[i32] {
        &self.symbols
    }
    pub fn len(&self) -> usize {
        self.symbols.len()
    }
    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Range-coded payload.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    bytes: Vec<u8>,
}

impl Bitstream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Bitstream { bytes }
    }
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
    pub fn len_bytes(&self) -> usize {
        self.bytes.len()
    }
    pub fn len_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

/// Probability that a discretized Gaussian emits integer `k`:
/// `Phi((k+0.5-mu)/sigma) - Phi((k-0.5-mu)/sigma)`, with sigma clamped.
pub fn discretized_gaussian_pmf(k: i32, mu: f64, sigma: f64) -> f64 {
    let s = sigma.clamp(SIGMA_MIN, SIGMA_MAX);
    normal_cdf((k as f64 + 0.5 - mu) / s) - normal_cdf((k as f64 - 0.5 - mu) / s)
}

/// Differentiable-path rate estimate: sum of -log2 pmf over the plane, in
/// bits. Tracks the measured stream length within 2% + 32 bits on planes of
/// a few thousand model-typical symbols.
pub fn estimate_rate(symbols: &SymbolPlane, params: &GaussianParams) -> TensorResult<f64> {
    if symbols.dims() != params.dims() {
        return Err(TensorError::ShapeMismatch {
            context: "estimate_rate",
            left: symbols.dims().as_array(),
            right: params.dims().as_array(),
        });
    }
    let mut bits = 0.0;
    for (i, &k) in symbols.symbols().iter().enumerate() {
        let p = discretized_gaussian_pmf(
            k,
            params.mean.data()[i] as f64,
            params.scale.data()[i] as f64,
        )
        .max(1e-30);
        bits -= p.log2();
    }
    Ok(bits)
}

/// Fixed-point model for one position: window [lo, hi] plus an escape slot.
pub struct PositionModel {
    lo: i32,
    hi: i32,
    /// Cumulative counts; length (hi-lo+1) + 2, first 0, last exactly 2^16.
    cdf: Vec<u32>,
}

impl PositionModel {
    pub fn build(mu: f64, sigma: f64) -> PositionModel {
        let s = sigma.clamp(SIGMA_MIN, SIGMA_MAX);
        let lo = ((mu - 6.0 * s).floor() as i64 - 1).clamp(-(SYMBOL_MAX as i64), SYMBOL_MAX as i64) as i32;
        let mut hi = ((mu + 6.0 * s).ceil() as i64 + 1).clamp(-(SYMBOL_MAX as i64), SYMBOL_MAX as i64) as i32;
        if hi < lo {
            hi = lo;
        }
        let n = (hi - lo + 1) as usize;

        // CDF values at the bin edges k - 0.5 for k in lo ..= hi+1.
        let mut edges = Vec::with_capacity(n + 1);
        for k in lo..=(hi + 1) {
            edges.push(normal_cdf((k as f64 - 0.5 - mu) / s));
        }
        let mut probs = Vec::with_capacity(n + 1);
        for i in 0..n {
            let mut p = edges[i + 1] - edges[i];
            if i == 0 {
                p += edges[0]; // fold lower tail
            }
            if i == n - 1 {
                p += 1.0 - edges[n]; // fold upper tail
            }
            probs.push(p.max(0.0));
        }
        // Escape reserve.
        let esc = ESCAPE_COUNTS as f64 / TOT as f64;
        for p in &mut probs {
            *p *= 1.0 - esc;
        }
        probs.push(esc);

        // Cumulative fixed-point quantization with a floor of one count per
        // entry; last entry pinned to exactly 2^16.
        let entries = probs.len();
        let mut cdf = Vec::with_capacity(entries + 1);
        cdf.push(0u32);
        let mut cum = 0.0f64;
        for (i, &p) in probs.iter().enumerate() {
            cum += p;
            let target = (cum * TOT as f64).round() as i64;
            let min_v = cdf[i] as i64 + 1;
            let max_v = (TOT as i64) - (entries - 1 - i) as i64;
            let v = if i == entries - 1 { TOT as i64 } else { target.clamp(min_v, max_v) };
            cdf.push(v as u32);
        }
        PositionModel { lo, hi, cdf }
    }

    fn escape_index(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    /// Window slot for a symbol, or None when it must escape.
    fn index_of(&self, k: i32) -> Option<usize> {
        if k >= self.lo && k <= self.hi {
            Some((k - self.lo) as usize)
        } else {
            None
        }
    }

    fn interval(&self, idx: usize) -> (u32, u32) {
        (self.cdf[idx], self.cdf[idx + 1])
    }

    fn find(&self, target: u32) -> usize {
        // cdf is strictly increasing; binary search for the containing slot.
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Total fixed-point mass; exactly 2^16 by construction.
    pub fn total(&self) -> u32 {
        *self.cdf.last().unwrap()
    }
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    /// Code the interval [cum_lo, cum_hi) out of 2^16. The top interval
    /// absorbs the renormalization remainder.
    fn encode(&mut self, cum_lo: u32, cum_hi: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= TOT);
        let r = self.range >> TOT_BITS;
        self.low += (r as u64) * (cum_lo as u64);
        self.range = if cum_hi == TOT { self.range - r * cum_lo } else { r * (cum_hi - cum_lo) };
        while self.range < RENORM_LIMIT {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn encode_raw16(&mut self, v: u16) {
        for i in (0..16).rev() {
            let bit = (v >> i) & 1;
            let half = TOT / 2;
            self.encode(bit as u32 * half, bit as u32 * half + half);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { data, pos: 0, range: u32::MAX, code: 0 };
        d.next_byte()?; // leading cache byte
        for _ in 0..4 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if self.pos >= self.data.len() {
            return Err(CodecError::TruncatedStream);
        }
        let b = self.data[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn target(&self) -> u32 {
        let r = self.range >> TOT_BITS;
        (self.code / r).min(TOT - 1)
    }

    fn advance(&mut self, cum_lo: u32, cum_hi: u32) -> Result<()> {
        let r = self.range >> TOT_BITS;
        self.code -= r * cum_lo;
        self.range = if cum_hi == TOT { self.range - r * cum_lo } else { r * (cum_hi - cum_lo) };
        while self.range < RENORM_LIMIT {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    fn decode_raw16(&mut self) -> Result<u16> {
        let mut v = 0u16;
        for _ in 0..16 {
            let half = TOT / 2;
            let bit = self.target() >= half;
            self.advance(if bit { half } else { 0 }, if bit { TOT } else { half })?;
            v = (v << 1) | bit as u16;
        }
        Ok(v)
    }
}

/// Range-code a symbol plane under its per-position Gaussian model.
pub fn encode(symbols: &SymbolPlane, params: &GaussianParams) -> Result<Bitstream> {
    if symbols.dims() != params.dims() {
        return Err(TensorError::ShapeMismatch {
            context: "entropy encode",
            left: symbols.dims().as_array(),
            right: params.dims().as_array(),
        }
        .into());
    }
    if symbols.is_empty() {
        return Ok(Bitstream::default());
    }
    let mut enc = RangeEncoder::new();
    for (i, &k) in symbols.symbols().iter().enumerate() {
        let model =
            PositionModel::build(params.mean.data()[i] as f64, params.scale.data()[i] as f64);
        match model.index_of(k) {
            Some(idx) => {
                let (lo, hi) = model.interval(idx);
                enc.encode(lo, hi);
            }
            None => {
                let (lo, hi) = model.interval(model.escape_index());
                enc.encode(lo, hi);
                enc.encode_raw16((k as i16) as u16);
            }
        }
    }
    Ok(Bitstream::from_bytes(enc.finish()))
}

/// Exact inverse of [`encode`] given bit-identical params. Mismatched params
/// produce garbage symbols without any detectable error.
pub fn decode(bits: &Bitstream, params: &GaussianParams) -> Result<SymbolPlane> {
    if params.is_empty() {
        return Ok(SymbolPlane::new(params.dims(), Vec::new())?);
    }
    let mut dec = RangeDecoder::new(bits.bytes())?;
    let mut symbols = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let model =
            PositionModel::build(params.mean.data()[i] as f64, params.scale.data()[i] as f64);
        let idx = model.find(dec.target());
        let (lo, hi) = model.interval(idx);
        dec.advance(lo, hi)?;
        if idx == model.escape_index() {
            let raw = dec.decode_raw16()?;
            symbols.push((raw as i16) as i32);
        } else {
            symbols.push(model.lo + idx as i32);
        }
    }
    Ok(SymbolPlane::new(params.dims(), symbols)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use proptest::prelude::*;

    fn plane_params(dims: Dims, rng: &mut DetRng, sigma_lo: f64, sigma_hi: f64) -> GaussianParams {
        let mut mean = Tensor::zeros(dims);
        let mut scale = Tensor::zeros(dims);
        for i in 0..dims.len() {
            mean.data_mut()[i] = rng.range_f64(-20.0, 20.0) as f32;
            // log-uniform scales
            let t = rng.unit();
            scale.data_mut()[i] = (sigma_lo * (sigma_hi / sigma_lo).powf(t)) as f32;
        }
        GaussianParams::new(mean, scale).unwrap()
    }

    #[test]
    fn pmf_reference_value() {
        let p = discretized_gaussian_pmf(0, 0.0, 1.0);
        assert!((p - 0.382925).abs() < 1e-5, "pmf(0;0,1) = {p}");
    }

    #[test]
    fn pmf_symmetry() {
        for k in -5..=5 {
            for &(mu, s) in &[(0.3, 0.7), (1.5, 2.0), (-2.2, 0.2)] {
                let a = discretized_gaussian_pmf(k, mu, s);
                let b = discretized_gaussian_pmf(-k, -mu, s);
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quantized_mass_sums_to_one() {
        for &(mu, s) in
            &[(0.0, 1.0), (3.7, 0.04), (-12.25, 17.0), (0.0, 256.0), (300.0, 1.0), (-400.0, 0.5)]
        {
            let m = PositionModel::build(mu, s);
            assert_eq!(m.total(), TOT, "mu {mu} sigma {s}");
            for w in m.cdf.windows(2) {
                assert!(w[0] < w[1], "cdf not strictly increasing at mu {mu} sigma {s}");
            }
        }
    }

    #[test]
    fn single_symbol_smallest_case() {
        let dims = Dims::new(1, 1, 1, 1);
        let params = GaussianParams::new(
            Tensor::zeros(dims),
            Tensor::filled(dims, SIGMA_MIN as f32),
        )
        .unwrap();
        let plane = SymbolPlane::new(dims, vec![0]).unwrap();
        let bits = encode(&plane, &params).unwrap();
        assert_eq!(decode(&bits, &params).unwrap(), plane);
    }

    #[test]
    fn empty_plane_empty_payload() {
        let dims = Dims::new(1, 0, 1, 1);
        let params = GaussianParams::new(Tensor::zeros(dims), Tensor::zeros(dims)).unwrap();
        let plane = SymbolPlane::new(dims, vec![]).unwrap();
        let bits = encode(&plane, &params).unwrap();
        assert_eq!(bits.len_bytes(), 0);
        assert_eq!(decode(&bits, &params).unwrap(), plane);
    }

    #[test]
    fn escape_path_roundtrip() {
        let dims = Dims::new(1, 1, 1, 8);
        let params = GaussianParams::new(
            Tensor::zeros(dims),
            Tensor::filled(dims, 0.5f32),
        )
        .unwrap();
        // far outside every window, including the i16 extremes
        let syms = vec![-3000, 3000, 256, -256, 32767, -32768, 0, 1];
        let plane = SymbolPlane::new(dims, syms).unwrap();
        let bits = encode(&plane, &params).unwrap();
        assert_eq!(decode(&bits, &params).unwrap(), plane);
    }

    #[test]
    fn truncated_stream_detected() {
        let dims = Dims::new(1, 1, 4, 4);
        let mut r = DetRng::seeded(5);
        let params = plane_params(dims, &mut r, 0.5, 4.0);
        let symbols: Vec<i32> = (0..16).map(|_| r.below(21) as i32 - 10).collect();
        let plane = SymbolPlane::new(dims, symbols).unwrap();
        let bits = encode(&plane, &params).unwrap();
        let cut = Bitstream::from_bytes(bits.bytes()[..3].to_vec());
        assert!(matches!(decode(&cut, &params), Err(CodecError::TruncatedStream)));
    }

    #[test]
    fn rate_monotone_in_symbol_distance() {
        let dims = Dims::new(1, 1, 1, 1);
        let params =
            GaussianParams::new(Tensor::filled(dims, 0.25f32), Tensor::filled(dims, 1.5f32))
                .unwrap();
        let mut last = 0.0;
        for k in 0..6 {
            let plane = SymbolPlane::new(dims, vec![k]).unwrap();
            let r = estimate_rate(&plane, &params).unwrap();
            assert!(r >= last, "rate not monotone at |k - mu| = {k}");
            last = r;
        }
    }

    #[test]
    fn one_symbol_at_mean_rate() {
        let dims = Dims::new(1, 1, 1, 1);
        let params =
            GaussianParams::new(Tensor::filled(dims, 4.0f32), Tensor::filled(dims, 1.0f32))
                .unwrap();
        let plane = SymbolPlane::new(dims, vec![4]).unwrap();
        let bits = estimate_rate(&plane, &params).unwrap();
        assert!((bits - 1.3851).abs() < 1e-3, "got {bits}");
    }

    #[test]
    fn near_zero_rate_for_concentrated_model() {
        let dims = Dims::new(1, 1, 8, 8);
        let params = GaussianParams::new(
            Tensor::zeros(dims),
            Tensor::filled(dims, SIGMA_MIN as f32),
        )
        .unwrap();
        let plane = SymbolPlane::new(dims, vec![0; 64]).unwrap();
        let est = estimate_rate(&plane, &params).unwrap();
        assert!(est < 0.1, "estimate {est} bits");
        let bits = encode(&plane, &params).unwrap();
        // escape reserve + floors + flush keep this small but nonzero
        assert!(bits.len_bits() <= 80, "measured {} bits", bits.len_bits());
    }

    /// Draw a symbol from a position's quantized model.
    fn draw_symbol(m: &PositionModel, rng: &mut DetRng) -> i32 {
        loop {
            let u = rng.below(TOT);
            let idx = m.find(u);
            if idx != m.escape_index() {
                return m.lo + idx as i32;
            }
            // escape slot: resample (tested separately)
        }
    }

    #[test]
    fn rate_estimate_tracks_measured_length() {
        let dims = Dims::new(1, 4, 32, 32); // 4096 symbols
        let mut r = DetRng::seeded(33);
        let params = plane_params(dims, &mut r, 0.1, 16.0);
        let mut symbols = Vec::with_capacity(dims.len());
        for i in 0..dims.len() {
            let m = PositionModel::build(
                params.mean().data()[i] as f64,
                params.scale().data()[i] as f64,
            );
            symbols.push(draw_symbol(&m, &mut r));
        }
        let plane = SymbolPlane::new(dims, symbols).unwrap();
        let est = estimate_rate(&plane, &params).unwrap();
        let measured = encode(&plane, &params).unwrap().len_bits() as f64;
        let bound = est * 0.02 + 32.0;
        assert!(
            (measured - est).abs() <= bound,
            "measured {measured} vs estimate {est} (bound {bound})"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lossless_roundtrip(seed in 0u64..10_000) {
            let mut r = DetRng::seeded(seed);
            let dims = Dims::new(1, 2, 8, 8);
            let params = plane_params(dims, &mut r, SIGMA_MIN, SIGMA_MAX);
            let symbols: Vec<i32> =
                (0..dims.len()).map(|_| r.below(601) as i32 - 300).collect();
            let plane = SymbolPlane::new(dims, symbols).unwrap();
            let bits = encode(&plane, &params).unwrap();
            prop_assert_eq!(decode(&bits, &params).unwrap(), plane);
        }
    }
}
